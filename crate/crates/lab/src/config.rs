//! Flat `key = value` scenario configs with command-line overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("unknown sweep suite `{0}` (expected lemma31, calibration, transform, ct-identity, limit-quarter-pi or gradient)")]
    UnknownSuite(String),
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("override `{0}` is not of the form key=value")]
    BadOverride(String),
    #[error("scenario `{scenario}` has no parameter `{key}`")]
    UnknownKey { scenario: String, key: String },
    #[error("parameter `{key}` = `{value}`: expected {expected}")]
    Invalid {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("parameter `{key}` = {value} is outside {range}")]
    OutOfRange {
        key: String,
        value: String,
        range: String,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Lemma31,
    Calibration,
    Transform,
    CtIdentity,
    LimitQuarterPi,
    Gradient,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Lemma31,
        Suite::Calibration,
        Suite::Transform,
        Suite::CtIdentity,
        Suite::LimitQuarterPi,
        Suite::Gradient,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Lemma31 => "lemma31",
            Suite::Calibration => "calibration",
            Suite::Transform => "transform",
            Suite::CtIdentity => "ct-identity",
            Suite::LimitQuarterPi => "limit-quarter-pi",
            Suite::Gradient => "gradient",
        }
    }

    pub fn default_trials(self) -> usize {
        match self {
            Suite::Lemma31 | Suite::Calibration => 100_000,
            Suite::LimitQuarterPi => 1_000,
            _ => 10_000,
        }
    }
}

impl FromStr for Suite {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| ConfigError::UnknownSuite(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveKind {
    Poisson,
    Ma,
    Family,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioId {
    Annulus,
    Sec6,
    Maximality,
    Sweep(Suite),
    Solve(SolveKind),
    Transform,
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioId::Annulus => write!(f, "annulus"),
            ScenarioId::Sec6 => write!(f, "sec6"),
            ScenarioId::Maximality => write!(f, "maximality"),
            ScenarioId::Sweep(s) => write!(f, "sweep:{}", s.name()),
            ScenarioId::Solve(SolveKind::Poisson) => write!(f, "solve:poisson"),
            ScenarioId::Solve(SolveKind::Ma) => write!(f, "solve:ma"),
            ScenarioId::Solve(SolveKind::Family) => write!(f, "solve:family"),
            ScenarioId::Transform => write!(f, "transform"),
        }
    }
}

impl FromStr for ScenarioId {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "annulus" => Ok(ScenarioId::Annulus),
            "sec6" => Ok(ScenarioId::Sec6),
            "maximality" => Ok(ScenarioId::Maximality),
            "transform" => Ok(ScenarioId::Transform),
            "solve:poisson" => Ok(ScenarioId::Solve(SolveKind::Poisson)),
            "solve:ma" => Ok(ScenarioId::Solve(SolveKind::Ma)),
            "solve:family" => Ok(ScenarioId::Solve(SolveKind::Family)),
            _ => match s.strip_prefix("sweep:") {
                Some(suite) => Ok(ScenarioId::Sweep(suite.parse()?)),
                None => Err(ConfigError::UnknownScenario(s.to_string())),
            },
        }
    }
}

const BOX_KEYS: [&str; 5] = ["x1_min", "x1_max", "x2_min", "x2_max", "resolution"];
const SOLVER_KEYS: [&str; 3] = ["max_iterations", "tolerance", "guess"];

impl ScenarioId {
    /// Parameter names the scenario reads.
    pub fn keys(&self) -> Vec<&'static str> {
        let mut keys = match self {
            ScenarioId::Annulus => vec!["eps", "eta", "resolution"],
            ScenarioId::Sec6 => {
                let mut k = vec!["t", "k", "expect"];
                k.extend(BOX_KEYS);
                k
            }
            ScenarioId::Maximality => vec![
                "potential",
                "potential_file",
                "c",
                "perturbations",
                "seed",
                "resolution",
                "lo",
                "hi",
                "strength_min",
                "strength_max",
                "residual_tol",
            ],
            ScenarioId::Sweep(_) => vec!["trials", "seed", "max_dim"],
            ScenarioId::Solve(kind) => {
                let mut k = vec!["boundary", "boundary_file", "l1", "l2", "l12", "amp", "rhs"];
                k.extend(BOX_KEYS);
                k.extend(SOLVER_KEYS);
                match kind {
                    SolveKind::Poisson => k.extend(["k"]),
                    SolveKind::Ma => {}
                    SolveKind::Family => k.extend(["t", "radial_k", "radial_c"]),
                }
                k
            }
            ScenarioId::Transform => {
                let mut k = vec![
                    "t",
                    "potential",
                    "potential_file",
                    "k",
                    "l1",
                    "l2",
                    "l12",
                    "radial_k",
                    "radial_c",
                ];
                k.extend(BOX_KEYS);
                k
            }
        };
        keys.sort_unstable();
        keys
    }
}

/// A scenario id with its raw parameters and output directory.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: ScenarioId,
    pub params: Params,
    pub out: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn new(scenario: ScenarioId) -> Self {
        Self {
            scenario,
            params: Params::default(),
            out: None,
        }
    }

    /// Builds a config from optional file text and `key=value` overrides, rejecting
    /// keys the scenario does not read.
    pub fn assemble(
        scenario: ScenarioId,
        text: Option<&str>,
        overrides: &[String],
    ) -> Result<Self, ConfigError> {
        let mut params = match text {
            Some(t) => Params::parse(t)?,
            None => Params::default(),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| ConfigError::BadOverride(o.clone()))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(ConfigError::BadOverride(o.clone()));
            }
            params.set(k, v.trim());
        }
        let allowed = scenario.keys();
        if let Some(key) = params.0.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(ConfigError::UnknownKey {
                scenario: scenario.to_string(),
                key: key.clone(),
            });
        }
        Ok(Self {
            scenario,
            params,
            out: None,
        })
    }

    pub fn load(
        scenario: ScenarioId,
        path: Option<&Path>,
        overrides: &[String],
    ) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => Some(
                std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_path_buf(),
                    source,
                })?,
            ),
            None => None,
        };
        Self::assemble(scenario, text.as_deref(), overrides)
    }
}

/// Raw string parameters, read back through typed getters with defaults.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Params(BTreeMap<String, String>);

impl Params {
    /// Parses `key = value` lines; `#` and `;` start comments.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) if !k.trim().is_empty() => {
                    map.insert(k.trim().to_string(), v.trim().to_string());
                }
                _ => {
                    return Err(ConfigError::Syntax {
                        line: i + 1,
                        text: raw.to_string(),
                    })
                }
            }
        }
        Ok(Self(map))
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.set(key, &value.to_string());
        self
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn typed<T: FromStr>(
        &self,
        key: &str,
        default: T,
        expected: &'static str,
    ) -> Result<T, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::Invalid {
                key: key.to_string(),
                value: v.to_string(),
                expected,
            }),
        }
    }

    pub fn f64(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v = self.typed(key, default, "a number")?;
        if !v.is_finite() {
            return Err(ConfigError::Invalid {
                key: key.to_string(),
                value: v.to_string(),
                expected: "a finite number",
            });
        }
        Ok(v)
    }

    pub fn usize(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        self.typed(key, default, "a non-negative integer")
    }

    pub fn u64(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        self.typed(key, default, "a non-negative integer")
    }

    pub fn string(&self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }
}

/// Fails with [`ConfigError::OutOfRange`] unless `ok`.
pub fn ensure(
    ok: bool,
    key: &str,
    value: impl fmt::Display,
    range: &str,
) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::OutOfRange {
            key: key.to_string(),
            value: value.to_string(),
            range: range.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_ids_round_trip() {
        for id in [
            "annulus",
            "sec6",
            "maximality",
            "transform",
            "solve:ma",
            "sweep:ct-identity",
        ] {
            assert_eq!(id.parse::<ScenarioId>().unwrap().to_string(), id);
        }
        assert!(matches!(
            "sweep:nope".parse::<ScenarioId>(),
            Err(ConfigError::UnknownSuite(_))
        ));
        assert!(matches!(
            "volume".parse::<ScenarioId>(),
            Err(ConfigError::UnknownScenario(_))
        ));
    }

    #[test]
    fn file_then_overrides() {
        let text = "# annulus\neps = 0.05 ; thin\n\nresolution=129\n";
        let cfg =
            ScenarioConfig::assemble(ScenarioId::Annulus, Some(text), &["eps=0.1".into()]).unwrap();
        assert_eq!(cfg.params.f64("eps", 0.0).unwrap(), 0.1);
        assert_eq!(cfg.params.usize("resolution", 0).unwrap(), 129);
        assert_eq!(cfg.params.f64("eta", 0.01).unwrap(), 0.01);
    }

    #[test]
    fn bad_input_is_rejected() {
        assert!(matches!(
            Params::parse("eps 0.1"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        let unknown = ScenarioConfig::assemble(ScenarioId::Annulus, None, &["k=3".into()]);
        assert!(matches!(unknown, Err(ConfigError::UnknownKey { .. })));
        let bad = ScenarioConfig::assemble(ScenarioId::Annulus, None, &["eps".into()]);
        assert!(matches!(bad, Err(ConfigError::BadOverride(_))));
        let p = Params::default().with("eps", "abc");
        assert!(matches!(
            p.f64("eps", 0.0),
            Err(ConfigError::Invalid { .. })
        ));
        assert!(Params::default()
            .with("eps", "inf")
            .f64("eps", 0.0)
            .is_err());
    }
}
