//! Dirichlet solves of the Poisson, Monge-Ampere and family equations.

use serde::Serialize;
use slag_core::equation::{f_t, FamilyPoint};
use slag_core::lewy::RadialTransportSolution;
use slag_core::solvers::{
    solve_family, solve_monge_ampere, solve_poisson, BoundaryData, InitialGuess, SolverConfig,
    SolverError,
};
use slag_core::GridDomain;

use super::{PlanarBox, Potential};
use crate::config::{ensure, ConfigError, Params, SolveKind};
use crate::report::{csv, Check, ExperimentReport, Source};
use crate::{internal, param, LabError};

/// Sup-norm error allowed when the exact solution is a quadratic.
pub const QUADRATIC_TOL: f64 = 1e-9;

/// Newton starting point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Guess {
    /// Least-squares quadratic through the boundary values.
    #[default]
    Fit,
    /// The closed-form boundary potential evaluated on the whole grid.
    Boundary,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveParams {
    #[serde(serialize_with = "potential_name")]
    pub boundary: Potential,
    pub domain: PlanarBox,
    /// `a` for Poisson, `c` for Monge-Ampere and the family; derived from the
    /// boundary potential when it is an exact solution.
    pub rhs: Option<f64>,
    /// Family angle.
    pub t: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub guess: Guess,
}

fn potential_name<S: serde::Serializer>(p: &Potential, s: S) -> Result<S::Ok, S::Error> {
    match p {
        Potential::File(path) => s.serialize_str(&format!("file:{}", path.display())),
        other => s.serialize_str(other.name()),
    }
}

impl SolveParams {
    pub fn new(boundary: Potential, domain: PlanarBox) -> Self {
        Self {
            boundary,
            domain,
            rhs: None,
            t: std::f64::consts::FRAC_PI_8,
            max_iterations: 50,
            tolerance: 1e-10,
            guess: Guess::Fit,
        }
    }

    pub fn from_params(kind: SolveKind, p: &Params) -> Result<Self, LabError> {
        let t = p.f64("t", std::f64::consts::FRAC_PI_8)?;
        let (boundary, default_box) = match p.string("boundary", "quadratic").as_str() {
            "quadratic" => (
                Potential::Quadratic {
                    l1: p.f64("l1", 1.0)?,
                    l2: p.f64("l2", 1.0)?,
                    l12: p.f64("l12", 0.0)?,
                },
                PlanarBox::square(0.0, 1.0, 33),
            ),
            "sec6" if kind == SolveKind::Poisson => (
                Potential::Exponential {
                    a: p.f64("rhs", 2.0)?,
                    k: p.f64("k", 3.0)?,
                },
                PlanarBox {
                    x1: [0.1, 1.0],
                    x2: [0.0, 1.0],
                    resolution: 33,
                },
            ),
            "perturbed" => (
                Potential::Perturbed {
                    amp: p.f64("amp", 0.05)?,
                },
                PlanarBox::square(0.0, 1.0, 33),
            ),
            "radial" if kind == SolveKind::Family => (
                Potential::Radial(
                    RadialTransportSolution::new(
                        t,
                        p.f64("radial_k", 1.0)?,
                        p.f64("radial_c", 0.3)?,
                    )
                    .map_err(param)?,
                ),
                PlanarBox::square(0.4, 1.2, 33),
            ),
            "file" => (
                Potential::File(
                    p.path("boundary_file")
                        .ok_or_else(|| ConfigError::Invalid {
                            key: "boundary_file".into(),
                            value: String::new(),
                            expected: "a grid file path when boundary = file",
                        })?,
                ),
                PlanarBox::square(0.0, 1.0, 33),
            ),
            other => {
                return Err(ConfigError::Invalid {
                    key: "boundary".into(),
                    value: other.into(),
                    expected: "quadratic, perturbed, file, sec6 (poisson) or radial (family)",
                }
                .into())
            }
        };
        let rhs = match p.raw("rhs") {
            Some(_) => Some(p.f64("rhs", 0.0)?),
            None => None,
        };
        let guess = match p.string("guess", "fit").as_str() {
            "fit" => Guess::Fit,
            "boundary" => Guess::Boundary,
            other => {
                return Err(ConfigError::Invalid {
                    key: "guess".into(),
                    value: other.into(),
                    expected: "fit or boundary",
                }
                .into())
            }
        };
        Ok(Self {
            boundary,
            domain: PlanarBox::from_params(p, default_box)?,
            rhs,
            t,
            max_iterations: p.usize("max_iterations", 50)?,
            tolerance: p.f64("tolerance", 1e-10)?,
            guess,
        })
    }
}

/// The right-hand side the boundary potential solves exactly, if any.
fn implied_rhs(kind: SolveKind, boundary: &Potential, t: f64) -> Result<Option<f64>, LabError> {
    Ok(match (kind, boundary) {
        (SolveKind::Poisson, Potential::Quadratic { l1, l2, .. }) => Some(-(l1 + l2) / 2.0),
        (SolveKind::Poisson, Potential::Exponential { a, .. }) => Some(*a),
        (SolveKind::Ma, Potential::Quadratic { l1, l2, l12 }) => {
            let det = l1 * l2 - l12 * l12;
            if !(det > 0.0 && *l1 > 0.0) {
                return Err(LabError::Parameter(format!(
                    "quadratic boundary is not convex (det {det}); it solves no Monge-Ampere problem"
                )));
            }
            Some(det.sqrt())
        }
        (SolveKind::Family, Potential::Quadratic { l1, l2, l12 }) => {
            let mean = 0.5 * (l1 + l2);
            let radius = (0.25 * (l1 - l2).powi(2) + l12 * l12).sqrt();
            let point = FamilyPoint::new(t, 0.0).map_err(param)?;
            Some(f_t(&[mean - radius, mean + radius], &point).map_err(param)?)
        }
        (SolveKind::Family, Potential::Radial(r)) => Some(r.rhs()),
        _ => None,
    })
}

fn solver_error(e: SolverError) -> Result<Option<(usize, f64)>, LabError> {
    match e {
        SolverError::NotConverged {
            iterations,
            residual,
        } => Ok(Some((iterations, residual))),
        SolverError::LeftEllipticBranch {
            iteration,
            residual,
        }
        | SolverError::LeftSpacelike {
            iteration,
            residual,
        } => Ok(Some((iteration, residual))),
        SolverError::Singular(_) => Err(internal(e)),
        other => Err(param(other)),
    }
}

pub fn run_solve(kind: SolveKind, params: &SolveParams) -> Result<ExperimentReport, LabError> {
    ensure(
        params.tolerance > 0.0,
        "tolerance",
        params.tolerance,
        "(0, inf)",
    )?;
    ensure(
        params.max_iterations >= 1,
        "max_iterations",
        params.max_iterations,
        "[1, inf)",
    )?;
    let (domain, bc): (GridDomain, BoundaryData) = match &params.boundary {
        Potential::File(path) => BoundaryData::read(path).map_err(param)?,
        pot => {
            let d = params.domain.domain()?;
            let bc = BoundaryData::from_fn(&d, pot.name(), |x| pot.value(x).unwrap_or(f64::NAN))
                .map_err(param)?;
            (d, bc)
        }
    };
    let implied = implied_rhs(kind, &params.boundary, params.t)?;
    let rhs = params.rhs.or(implied).ok_or_else(|| {
        LabError::Parameter("no right-hand side: set `rhs` for this boundary".into())
    })?;
    let exact = implied.is_some_and(|v| {
        params
            .rhs
            .is_none_or(|r| (r - v).abs() <= 1e-14 * v.abs().max(1.0))
    });

    let initial_guess = match params.guess {
        Guess::Fit => InitialGuess::QuadraticFit,
        Guess::Boundary if params.boundary.has_closed_form() => {
            InitialGuess::Provided(params.boundary.grid(&domain)?)
        }
        Guess::Boundary => {
            return Err(LabError::Parameter(
                "guess = boundary needs a closed-form boundary potential".into(),
            ))
        }
    };
    let cfg = SolverConfig {
        max_iterations: params.max_iterations,
        tolerance: params.tolerance,
        initial_guess,
        ..SolverConfig::default()
    };
    let outcome = match kind {
        SolveKind::Poisson => solve_poisson(&domain, rhs, &bc),
        SolveKind::Ma => solve_monge_ampere(&domain, rhs, &bc, &cfg),
        SolveKind::Family => solve_family(&domain, params.t, rhs, &bc, &cfg),
    };

    let mut r = ExperimentReport::new("solve");
    r.input("params", params)
        .input("rhs", rhs)
        .input("grid", &domain);
    let sol = match outcome {
        Ok(s) => s,
        Err(e) => {
            let message = e.to_string();
            let (iterations, residual) = solver_error(e)?.unwrap_or((0, f64::NAN));
            r.quantity("iterations", iterations)
                .quantity("residual", residual);
            r.check(Check::at_most(
                "residual",
                residual,
                params.tolerance,
                Source::Derived,
            ));
            r.verdict = Some(format!("solver failed: {message}"));
            return Ok(r);
        }
    };

    let rep = &sol.report;
    r.quantity("iterations", rep.iterations)
        .quantity("residual", rep.residual);
    let poisson_tol = 1e-10;
    let tol = if kind == SolveKind::Poisson {
        poisson_tol
    } else {
        params.tolerance
    };
    r.check(Check::at_most(
        "residual",
        rep.residual,
        tol,
        Source::Derived,
    ));
    if exact && params.boundary.has_closed_form() {
        let err = (0..domain.len())
            .map(|i| {
                (sol.u.values[i]
                    - params
                        .boundary
                        .value(&domain.node_coord(i))
                        .unwrap_or(f64::NAN))
                .abs()
            })
            .fold(0.0, f64::max);
        r.quantity("sup_error", err);
        if matches!(params.boundary, Potential::Quadratic { .. }) {
            r.check(Check::at_most(
                "sup_error",
                err,
                QUADRATIC_TOL,
                Source::Derived,
            ));
        }
    }
    if let Some(regimes) = &sol.regimes {
        let count =
            |f: fn(&slag_core::RegimeClass) -> bool| regimes.values.iter().filter(|c| f(c)).count();
        r.quantity("nodes_spacelike", count(|c| c.spacelike))
            .quantity("nodes_convex", count(|c| c.convex))
            .quantity("nodes_concave", count(|c| c.concave))
            .quantity("nodes", regimes.values.len());
    }
    r.attach(
        "residuals.csv",
        csv(
            &["iteration", "residual"],
            rep.residual_history
                .iter()
                .enumerate()
                .map(|(i, v)| vec![i as f64, *v]),
        ),
    );
    r.attach("u.csv", sol.u.to_csv());
    r.verdict = Some(format!("converged in {} iterations", rep.iterations));
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(l1: f64, l2: f64, l12: f64) -> Potential {
        Potential::Quadratic { l1, l2, l12 }
    }

    #[test]
    fn quadratics_are_recovered() {
        let d = PlanarBox::square(0.0, 1.0, 17);
        for (kind, t) in [
            (SolveKind::Poisson, 0.3),
            (SolveKind::Ma, 0.3),
            (SolveKind::Family, 0.3),
            (SolveKind::Family, 1.2),
        ] {
            let p = SolveParams {
                t,
                ..SolveParams::new(quadratic(1.5, 0.8, 0.2), d)
            };
            let r = run_solve(kind, &p).unwrap();
            assert!(r.passed, "{kind:?}: {}", r.to_json());
            assert!(r.find("sup_error").is_some());
            assert_eq!(
                r.artifacts,
                vec!["residuals.csv".to_string(), "u.csv".to_string()]
            );
        }
    }

    #[test]
    fn file_boundary_needs_a_rhs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bc.csv");
        let d = GridDomain::cube(2, 0.0, 1.0, 9).unwrap();
        slag_core::ScalarFieldGrid::from_fn(d, |x| x[0] * x[0] + x[1] * x[1])
            .unwrap()
            .write(&path)
            .unwrap();
        let p = SolveParams::new(Potential::File(path), PlanarBox::square(0.0, 1.0, 9));
        assert!(matches!(
            run_solve(SolveKind::Ma, &p),
            Err(LabError::Parameter(_))
        ));
        let r = run_solve(
            SolveKind::Ma,
            &SolveParams {
                rhs: Some(2.0),
                ..p
            },
        )
        .unwrap();
        assert!(r.passed);
        assert!(r.find("sup_error").is_none());
    }

    #[test]
    fn nonconvex_boundary_is_refused_for_monge_ampere() {
        let p = SolveParams::new(quadratic(1.0, -1.0, 0.0), PlanarBox::square(0.0, 1.0, 9));
        assert!(matches!(
            run_solve(SolveKind::Ma, &p),
            Err(LabError::Parameter(_))
        ));
    }

    #[test]
    fn exhausted_iterations_fail_the_check() {
        let p = SolveParams {
            max_iterations: 1,
            ..SolveParams::new(
                Potential::Perturbed { amp: 0.05 },
                PlanarBox::square(0.0, 1.0, 17),
            )
        };
        let p = SolveParams {
            rhs: Some(1.0),
            ..p
        };
        let r = run_solve(SolveKind::Ma, &p).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn boundary_guess_starts_inside_the_convex_cone() {
        let p = SolveParams {
            rhs: Some(1.0),
            tolerance: 1e-8,
            guess: Guess::Boundary,
            ..SolveParams::new(
                Potential::Perturbed { amp: 0.05 },
                PlanarBox::square(0.0, 1.0, 33),
            )
        };
        let r = run_solve(SolveKind::Ma, &p).unwrap();
        assert!(r.passed, "{}", r.to_json());
        let file = SolveParams {
            boundary: Potential::File("missing.csv".into()),
            ..p
        };
        assert!(matches!(
            run_solve(SolveKind::Ma, &file),
            Err(LabError::Parameter(_))
        ));
    }
}
