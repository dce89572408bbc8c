//! Batch scenarios over `slag-core`: worked examples, maximality experiments,
//! invariant sweeps, solver runs and reports.

pub mod cli;
pub mod config;
pub mod report;
pub mod scenarios;

use std::fmt::Display;

use thiserror::Error;

pub use config::{ConfigError, Params, ScenarioConfig, ScenarioId, SolveKind, Suite};
pub use report::{Check, Comparison, ExperimentReport, Source};
pub use scenarios::run_scenario;

#[derive(Debug, Error)]
pub enum LabError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// A precondition on the scenario inputs does not hold.
    #[error("{0}")]
    Parameter(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("writing artifacts: {0}")]
    Io(#[from] std::io::Error),
}

impl LabError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) | LabError::Parameter(_) => 3,
            LabError::Internal(_) | LabError::Io(_) => 4,
        }
    }
}

pub(crate) fn param(e: impl Display) -> LabError {
    LabError::Parameter(e.to_string())
}

pub(crate) fn internal(e: impl Display) -> LabError {
    LabError::Internal(e.to_string())
}
