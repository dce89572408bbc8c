//! `slag-lab <scenario> [--config FILE] [--set KEY=VALUE]... [--out DIR]`

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::Parser;

use crate::config::{ScenarioConfig, ScenarioId};
use crate::report::ExperimentReport;
use crate::scenarios::run_scenario;
use crate::LabError;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 2;
pub const EXIT_PARAMETER: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "slag-lab",
    version,
    about = "Run a geometry scenario and write its report"
)]
pub struct Cli {
    /// annulus, sec6, maximality, transform, sweep:<suite> or solve:<poisson|ma|family>
    pub scenario: String,
    /// Flat `key = value` parameter file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Parameter override; repeatable, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Directory for report.json and companion CSV files.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Print only the final status line.
    #[arg(long, short)]
    pub quiet: bool,
}

fn summary(report: &ExperimentReport, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "scenario {}", report.scenario)?;
    for c in &report.checks {
        writeln!(
            out,
            "  {} {:<28} value {:.6e}  target {:.6e}  tol {:.1e}  ({:?})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.target,
            c.tolerance,
            c.source
        )?;
    }
    if let Some(v) = &report.verdict {
        writeln!(out, "  verdict: {v}")?;
    }
    writeln!(out, "  wall time {:.3} s", report.timing.wall_seconds)
}

/// Parses `args` (including the program name), runs the scenario and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut impl Write, stderr: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_PASS,
                _ => EXIT_PARAMETER,
            };
            let _ = write!(
                if code == EXIT_PASS {
                    stdout as &mut dyn Write
                } else {
                    stderr
                },
                "{e}"
            );
            return code;
        }
    };
    match execute(&cli) {
        Ok(report) => {
            if !cli.quiet {
                let _ = summary(&report, stdout);
            }
            let (code, status) = if report.passed {
                (EXIT_PASS, "all checks passed")
            } else {
                (EXIT_CHECK_FAILED, "some checks failed")
            };
            let _ = writeln!(stdout, "{status}");
            code
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<ExperimentReport, LabError> {
    let id: ScenarioId = cli.scenario.parse()?;
    let mut cfg = ScenarioConfig::load(id, cli.config.as_deref(), &cli.set)?;
    cfg.out = cli.out.clone();
    let report = run_scenario(&cfg)?;
    if let Some(dir) = &cfg.out {
        report.write(dir)?;
    }
    Ok(report)
}
