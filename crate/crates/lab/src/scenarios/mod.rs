//! The registered scenarios and the shared pieces they are built from.

mod annulus;
mod maximality;
mod sec6;
mod solve;
mod sweeps;
mod transform;

use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;
use slag_core::lewy::RadialTransportSolution;
use slag_core::{GridDomain, ScalarFieldGrid};

use crate::config::{ensure, Params, ScenarioConfig, ScenarioId};
use crate::report::ExperimentReport;
use crate::{param, LabError};

pub use annulus::run_counterexample_annulus;
pub use maximality::{run_maximality_test, MaximalityParams, PotentialSource};
pub use sec6::{run_example_sec6, Expectation, Sec6Params};
pub use solve::{run_solve, Guess, SolveParams};
pub use sweeps::run_property_sweeps;
pub use transform::{run_transform, TransformParams};

/// Runs the scenario named in `cfg` and stamps the wall time.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ExperimentReport, LabError> {
    let start = Instant::now();
    let p = &cfg.params;
    let mut report = match cfg.scenario {
        ScenarioId::Annulus => run_counterexample_annulus(
            p.f64("eps", 0.01)?,
            p.f64("eta", 0.01)?,
            p.usize("resolution", 257)?,
        )?,
        ScenarioId::Sec6 => run_example_sec6(&Sec6Params::from_params(p)?)?,
        ScenarioId::Maximality => run_maximality_test(&MaximalityParams::from_params(p)?)?,
        ScenarioId::Sweep(suite) => run_property_sweeps(
            suite,
            p.usize("trials", suite.default_trials())?,
            p.u64("seed", 1)?,
            p.usize("max_dim", 6)?,
        )?,
        ScenarioId::Solve(kind) => run_solve(kind, &SolveParams::from_params(kind, p)?)?,
        ScenarioId::Transform => run_transform(&TransformParams::from_params(p)?)?,
    };
    report.scenario = cfg.scenario.to_string();
    report.timing.wall_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Axis-aligned planar box `[x1_min, x1_max] x [x2_min, x2_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PlanarBox {
    pub x1: [f64; 2],
    pub x2: [f64; 2],
    pub resolution: usize,
}

impl PlanarBox {
    pub fn square(lo: f64, hi: f64, resolution: usize) -> Self {
        Self {
            x1: [lo, hi],
            x2: [lo, hi],
            resolution,
        }
    }

    pub fn from_params(p: &Params, default: PlanarBox) -> Result<Self, LabError> {
        let b = Self {
            x1: [
                p.f64("x1_min", default.x1[0])?,
                p.f64("x1_max", default.x1[1])?,
            ],
            x2: [
                p.f64("x2_min", default.x2[0])?,
                p.f64("x2_max", default.x2[1])?,
            ],
            resolution: p.usize("resolution", default.resolution)?,
        };
        ensure(b.x1[0] < b.x1[1], "x1_max", b.x1[1], "(x1_min, inf)")?;
        ensure(b.x2[0] < b.x2[1], "x2_max", b.x2[1], "(x2_min, inf)")?;
        ensure(b.resolution >= 5, "resolution", b.resolution, "[5, inf)")?;
        Ok(b)
    }

    pub fn with_resolution(self, resolution: usize) -> Self {
        Self { resolution, ..self }
    }

    pub fn domain(&self) -> Result<GridDomain, LabError> {
        GridDomain::new(
            vec![self.x1, self.x2],
            vec![self.resolution, self.resolution],
        )
        .map_err(param)
    }
}

/// Closed-form potentials used as sources and boundary data.
#[derive(Clone, Debug, PartialEq)]
pub enum Potential {
    /// `(l1 x1^2 + 2 l12 x1 x2 + l2 x2^2) / 2`.
    Quadratic { l1: f64, l2: f64, l12: f64 },
    /// `-(a/2)|x|^2 + k e^{x1} cos x2`.
    Exponential { a: f64, k: f64 },
    /// `|x|^2/2 + amp cos(pi x1) cos(pi x2)`.
    Perturbed { amp: f64 },
    /// Exact radial solution of the log-ratio equation.
    Radial(RadialTransportSolution),
    /// Values read from a grid file.
    File(PathBuf),
}

impl Potential {
    pub fn name(&self) -> &'static str {
        match self {
            Potential::Quadratic { .. } => "quadratic",
            Potential::Exponential { .. } => "sec6",
            Potential::Perturbed { .. } => "perturbed",
            Potential::Radial(_) => "radial",
            Potential::File(_) => "file",
        }
    }

    /// Pointwise value; `None` for file-backed potentials.
    pub fn value(&self, x: &[f64]) -> Option<f64> {
        match self {
            Potential::Quadratic { l1, l2, l12 } => {
                Some(0.5 * (l1 * x[0] * x[0] + 2.0 * l12 * x[0] * x[1] + l2 * x[1] * x[1]))
            }
            Potential::Exponential { a, k } => {
                Some(-0.5 * a * (x[0] * x[0] + x[1] * x[1]) + k * x[0].exp() * x[1].cos())
            }
            Potential::Perturbed { amp } => {
                let pi = std::f64::consts::PI;
                Some(
                    0.5 * (x[0] * x[0] + x[1] * x[1]) + amp * (pi * x[0]).cos() * (pi * x[1]).cos(),
                )
            }
            Potential::Radial(r) => r.value(x),
            Potential::File(_) => None,
        }
    }

    pub fn has_closed_form(&self) -> bool {
        !matches!(self, Potential::File(_))
    }

    /// Samples the potential on `domain`, or reads the file (whose own domain wins).
    pub fn grid(&self, domain: &GridDomain) -> Result<ScalarFieldGrid, LabError> {
        match self {
            Potential::File(path) => ScalarFieldGrid::read(path).map_err(param),
            _ => ScalarFieldGrid::from_fn(domain.clone(), |x| self.value(x).unwrap_or(f64::NAN))
                .map_err(|e| {
                    LabError::Parameter(format!(
                        "{} potential is undefined on the grid: {e}",
                        self.name()
                    ))
                }),
        }
    }
}

/// Observed convergence orders between consecutive dyadic refinements.
pub fn orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

pub(crate) fn min_or_nan(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}
