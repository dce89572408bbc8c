//! Experiment reports: echoed inputs, computed quantities, graded checks and artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

/// Where an expected value comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// A closed-form reference value the scenario reproduces.
    Reference,
    /// Computed independently (closed form or brute force).
    Derived,
    /// Follows from the construction.
    Trivial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// `|value - target| <= tolerance`.
    Within,
    /// `value <= target + tolerance`.
    AtMost,
    /// `value >= target - tolerance`.
    AtLeast,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
    pub comparison: Comparison,
    pub source: Source,
    pub passed: bool,
}

impl Check {
    pub fn new(
        name: &str,
        value: f64,
        target: f64,
        tolerance: f64,
        comparison: Comparison,
        source: Source,
    ) -> Self {
        let passed = value.is_finite()
            && match comparison {
                Comparison::Within => (value - target).abs() <= tolerance,
                Comparison::AtMost => value <= target + tolerance,
                Comparison::AtLeast => value >= target - tolerance,
            };
        Self {
            name: name.to_string(),
            value,
            target,
            tolerance,
            comparison,
            source,
            passed,
        }
    }

    pub fn within(name: &str, value: f64, target: f64, tolerance: f64, source: Source) -> Self {
        Self::new(name, value, target, tolerance, Comparison::Within, source)
    }

    pub fn at_most(name: &str, value: f64, bound: f64, source: Source) -> Self {
        Self::new(name, value, bound, 0.0, Comparison::AtMost, source)
    }

    pub fn at_least(name: &str, value: f64, bound: f64, source: Source) -> Self {
        Self::new(name, value, bound, 0.0, Comparison::AtLeast, source)
    }

    /// A yes/no outcome encoded as `1.0`/`0.0` against `1.0`.
    pub fn holds(name: &str, ok: bool, source: Source) -> Self {
        Self::within(name, if ok { 1.0 } else { 0.0 }, 1.0, 0.0, source)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Timing {
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub inputs: BTreeMap<String, Value>,
    pub quantities: BTreeMap<String, Value>,
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<String>,
    pub passed: bool,
    /// File names relative to the output directory.
    pub artifacts: Vec<String>,
    pub timing: Timing,
    #[serde(skip)]
    pub files: Vec<(String, String)>,
}

impl ExperimentReport {
    pub fn new(scenario: impl Into<String>) -> Self {
        Self {
            scenario: scenario.into(),
            inputs: BTreeMap::new(),
            quantities: BTreeMap::new(),
            checks: Vec::new(),
            verdict: None,
            passed: true,
            artifacts: Vec::new(),
            timing: Timing::default(),
            files: Vec::new(),
        }
    }

    pub fn input(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        self.inputs.insert(key.to_string(), to_value(value));
        self
    }

    pub fn quantity(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        self.quantities.insert(key.to_string(), to_value(value));
        self
    }

    pub fn check(&mut self, check: Check) -> &mut Self {
        self.passed &= check.passed;
        self.checks.push(check);
        self
    }

    /// Queues a companion file to be written next to `report.json`.
    pub fn attach(&mut self, name: &str, contents: String) -> &mut Self {
        self.artifacts.push(name.to_string());
        self.files.push((name.to_string(), contents));
        self
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn find(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize") + "\n"
    }

    /// Writes `report.json` and every attached file into `dir`, returning their paths.
    pub fn write(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::with_capacity(self.files.len() + 1);
        for (name, contents) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, contents)?;
            written.push(path);
        }
        let path = dir.join("report.json");
        std::fs::write(&path, self.to_json())?;
        written.push(path);
        Ok(written)
    }
}

fn to_value(value: impl Serialize) -> Value {
    serde_json::to_value(value).unwrap_or(Value::Null)
}

/// Rows of numbers as CSV with a header.
pub fn csv(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
