//! The explicit extremal potential `u = -(a/2)|x|^2 + k e^{x1} cos x2` and its
//! rotated and projected images.

use serde::Serialize;
use slag_core::geometry::{
    hessian_eigenvalue_field, hessian_field, mean_curvature_residual, spacelike_margin,
};
use slag_core::lewy::{
    apply_phi_t, injectivity_check, projection_p, InjectivityVerdict, KAPPA_TOL,
};
use slag_core::solvers::poisson_residual;
use slag_core::{MetricConstants, Regime};

use super::{min_or_nan, orders, PlanarBox, Potential};
use crate::config::{ensure, ConfigError, Params};
use crate::report::{csv, Check, ExperimentReport, Source};
use crate::{internal, LabError};

/// Minimum observed order for the `O(h^2)` quantities.
pub const MIN_ORDER: f64 = 1.9;
/// Number of dyadic refinements after the base resolution.
pub const REFINEMENTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    Collision,
    Injective,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Sec6Params {
    pub t: f64,
    pub k: f64,
    /// Base box; the resolution is the coarsest of `REFINEMENTS + 1` levels.
    pub domain: PlanarBox,
    pub expect: Expectation,
}

impl Sec6Params {
    pub fn from_params(p: &Params) -> Result<Self, LabError> {
        let expect = match p.string("expect", "none").as_str() {
            "collision" => Expectation::Collision,
            "injective" => Expectation::Injective,
            "none" => Expectation::None,
            other => {
                return Err(ConfigError::Invalid {
                    key: "expect".into(),
                    value: other.into(),
                    expected: "collision, injective or none",
                }
                .into())
            }
        };
        Ok(Self {
            t: p.f64("t", 0.5f64.atan())?,
            k: p.f64("k", 50.0)?,
            domain: PlanarBox::from_params(
                p,
                PlanarBox {
                    x1: [0.1, 3.0],
                    x2: [0.0, 2.0 * std::f64::consts::PI],
                    resolution: 65,
                },
            )?,
            expect,
        })
    }
}

struct Level {
    resolution: usize,
    h: f64,
    laplacian: f64,
    eigenvalues: f64,
    curvature: f64,
}

fn level(
    params: &Sec6Params,
    m: &MetricConstants,
    resolution: usize,
) -> Result<(Level, f64), LabError> {
    let pot = Potential::Exponential {
        a: m.a,
        k: params.k,
    };
    let domain = params.domain.with_resolution(resolution).domain()?;
    let u = pot.grid(&domain)?;
    let eig = hessian_eigenvalue_field(&u).map_err(internal)?;
    let eigenvalues = eig
        .node_indices()
        .iter()
        .zip(&eig.values)
        .map(|(node, l)| {
            let e = params.k * domain.coord(node)[0].exp();
            (l[0] - (-m.a - e)).abs().max((l[1] - (-m.a + e)).abs())
        })
        .fold(0.0, f64::max);
    let margin = hessian_field(&u)
        .map_err(internal)?
        .values
        .iter()
        .map(|h| spacelike_margin(h, m.t))
        .fold(f64::INFINITY, f64::min);
    let curvature = mean_curvature_residual(&u, m.t)
        .map_err(internal)?
        .max_abs();
    Ok((
        Level {
            resolution,
            h: domain.h(),
            laplacian: poisson_residual(&u, m.a),
            eigenvalues,
            curvature,
        },
        margin,
    ))
}

/// Checks the potential on `REFINEMENTS + 1` dyadic levels, then rotates and projects
/// its gradient graph on the finest one.
pub fn run_example_sec6(params: &Sec6Params) -> Result<ExperimentReport, LabError> {
    let t = params.t;
    ensure(
        t > 0.0 && t < std::f64::consts::FRAC_PI_4,
        "t",
        t,
        "(0, pi/4)",
    )?;
    let m = MetricConstants::new(t).map_err(internal)?;
    debug_assert_eq!(m.regime, Regime::Pseudo);
    let smallest = params.k * params.domain.x1[0].exp();
    if params.k <= m.b || smallest <= m.b {
        return Err(LabError::Parameter(format!(
            "not space-like: k e^(x1_min) = {smallest} must exceed b = {}",
            m.b
        )));
    }

    let mut levels = Vec::with_capacity(REFINEMENTS + 1);
    let mut margin = f64::INFINITY;
    let mut res = params.domain.resolution;
    for _ in 0..=REFINEMENTS {
        let (l, s) = level(params, &m, res)?;
        margin = margin.min(s);
        levels.push(l);
        res = 2 * res - 1;
    }
    let finest = levels
        .last()
        .map(|l| l.resolution)
        .unwrap_or(params.domain.resolution);

    let mut r = ExperimentReport::new("sec6");
    r.input("t", t)
        .input("k", params.k)
        .input("domain", params.domain)
        .input("expect", params.expect);
    r.quantity("a", m.a)
        .quantity("b", m.b)
        .quantity("sigma", m.sigma)
        .quantity("tau", m.tau);

    let lap: Vec<f64> = levels.iter().map(|l| l.laplacian).collect();
    let eig: Vec<f64> = levels.iter().map(|l| l.eigenvalues).collect();
    let curv: Vec<f64> = levels.iter().map(|l| l.curvature).collect();
    for (name, errs, source) in [
        ("laplacian", &lap, Source::Reference),
        ("eigenvalues", &eig, Source::Reference),
        ("mean_curvature", &curv, Source::Derived),
    ] {
        let o = orders(errs);
        r.quantity(&format!("{name}_errors"), errs)
            .quantity(&format!("{name}_orders"), &o);
        r.check(Check::at_least(
            &format!("{name}_order"),
            min_or_nan(&o),
            MIN_ORDER,
            source,
        ));
    }
    r.quantity("min_spacelike_margin", margin);
    r.check(Check::at_least(
        "spacelike_margin",
        margin,
        0.0,
        Source::Reference,
    ));
    r.attach(
        "convergence.csv",
        csv(
            &[
                "resolution",
                "h",
                "laplacian",
                "eigenvalues",
                "mean_curvature",
            ],
            levels.iter().map(|l| {
                vec![
                    l.resolution as f64,
                    l.h,
                    l.laplacian,
                    l.eigenvalues,
                    l.curvature,
                ]
            }),
        ),
    );

    let u = Potential::Exponential {
        a: m.a,
        k: params.k,
    }
    .grid(&params.domain.with_resolution(finest).domain()?)?;
    let graph = apply_phi_t(&u, t).map_err(internal)?;
    r.quantity("kappa", graph.kappa);
    r.check(Check::within(
        "kappa",
        graph.kappa,
        1.0,
        KAPPA_TOL,
        Source::Derived,
    ));
    let proj = projection_p(&u, t).map_err(internal)?;
    r.quantity("dp_min_sym_eigenvalue", proj.min_sym_eigenvalue)
        .quantity("dp_uniformly_positive", proj.uniformly_positive);
    let verdict = injectivity_check(&proj.p);
    r.quantity("injectivity", &verdict);
    match params.expect {
        Expectation::Collision => {
            r.check(Check::holds(
                "collision_witness",
                !verdict.is_injective(),
                Source::Reference,
            ));
        }
        Expectation::Injective => {
            r.check(Check::holds(
                "injective",
                verdict.is_injective(),
                Source::Derived,
            ));
        }
        Expectation::None => {}
    }
    r.verdict = Some(match &verdict {
        InjectivityVerdict::Collision { x1, x2, .. } => {
            format!("p is not injective: p({x1:?}) = p({x2:?}) within tolerance")
        }
        InjectivityVerdict::Injective { .. } => "p is injective on the sampled domain".into(),
    });
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(k: f64) -> Sec6Params {
        Sec6Params {
            t: 0.5f64.atan(),
            k,
            domain: PlanarBox {
                x1: [0.1, 0.5],
                x2: [0.1, 0.5],
                resolution: 9,
            },
            expect: Expectation::Injective,
        }
    }

    #[test]
    fn small_k_square_is_injective() {
        let b = 3f64.sqrt();
        let r = run_example_sec6(&small(1.2 * b)).unwrap();
        assert!(r.find("injective").unwrap().passed);
        assert!(r.find("kappa").unwrap().passed);
        assert!(r.find("spacelike_margin").unwrap().passed);
        assert!(r.find("laplacian_order").unwrap().passed);
        assert_eq!(r.artifacts, vec!["convergence.csv".to_string()]);
    }

    #[test]
    fn timelike_parameters_are_refused() {
        let b = 3f64.sqrt();
        assert!(matches!(
            run_example_sec6(&small(0.9 * b)),
            Err(LabError::Parameter(_))
        ));
        let mut p = small(2.0 * b);
        p.t = 1.0;
        assert!(matches!(run_example_sec6(&p), Err(LabError::Config(_))));
    }
}
