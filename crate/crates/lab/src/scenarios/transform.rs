//! Rotation of a gradient graph by `phi_t`, projection, injectivity and, when `Dp`
//! is positive, reconstruction of the rotated potential.

use serde::Serialize;
use slag_core::geometry::{gradient_field, hessian_field};
use slag_core::lewy::{
    apply_phi_t, degenerate_projection_volume, injectivity_check, projection_p,
    reconstruct_hat_potential, RadialTransportSolution, KAPPA_TOL,
};
use slag_core::{MetricConstants, Regime};

use super::{PlanarBox, Potential};
use crate::config::{ConfigError, Params};
use crate::report::{Check, ExperimentReport, Source};
use crate::{internal, param, LabError};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransformParams {
    pub t: f64,
    #[serde(skip)]
    pub potential: Potential,
    pub potential_name: String,
    pub domain: PlanarBox,
}

impl TransformParams {
    pub fn new(t: f64, potential: Potential, domain: PlanarBox) -> Self {
        Self {
            t,
            potential_name: potential.name().to_string(),
            potential,
            domain,
        }
    }

    pub fn from_params(p: &Params) -> Result<Self, LabError> {
        let t = p.f64("t", std::f64::consts::FRAC_PI_8)?;
        let (potential, default_box) = match p.string("potential", "radial").as_str() {
            "radial" => (
                Potential::Radial(
                    RadialTransportSolution::new(
                        t,
                        p.f64("radial_k", 1.0)?,
                        p.f64("radial_c", 0.3)?,
                    )
                    .map_err(param)?,
                ),
                PlanarBox::square(0.4, 1.2, 65),
            ),
            "sec6" => {
                let m = MetricConstants::new(t).map_err(param)?;
                (
                    Potential::Exponential {
                        a: m.a,
                        k: p.f64("k", 1.5 * m.b)?,
                    },
                    PlanarBox {
                        x1: [0.1, 0.6],
                        x2: [0.0, 0.5],
                        resolution: 65,
                    },
                )
            }
            "quadratic" => (
                Potential::Quadratic {
                    l1: p.f64("l1", 1.0)?,
                    l2: p.f64("l2", 1.0)?,
                    l12: p.f64("l12", 0.0)?,
                },
                PlanarBox::square(0.0, 1.0, 33),
            ),
            "file" => (
                Potential::File(
                    p.path("potential_file")
                        .ok_or_else(|| ConfigError::Invalid {
                            key: "potential_file".into(),
                            value: String::new(),
                            expected: "a grid file path when potential = file",
                        })?,
                ),
                PlanarBox::square(0.0, 1.0, 33),
            ),
            other => {
                return Err(ConfigError::Invalid {
                    key: "potential".into(),
                    value: other.into(),
                    expected: "radial, sec6, quadratic or file",
                }
                .into())
            }
        };
        Ok(Self::new(
            t,
            potential,
            PlanarBox::from_params(p, default_box)?,
        ))
    }
}

pub fn run_transform(params: &TransformParams) -> Result<ExperimentReport, LabError> {
    let m = MetricConstants::new(params.t).map_err(param)?;
    let u = params.potential.grid(&params.domain.domain()?)?;
    let d = &u.domain;

    let mut r = ExperimentReport::new("transform");
    r.input("params", params).input("grid", d);
    r.quantity("sigma", m.sigma).quantity("tau", m.tau);

    if m.regime == Regime::Degenerate {
        let f = gradient_field(&u);
        let v = degenerate_projection_volume(&f).map_err(param)?;
        let scale = f
            .values
            .iter()
            .fold(0.0f64, |acc, x| acc.max(x.abs()))
            .max(1.0);
        let bound = 5.0 * d.h() * d.perimeter() * scale;
        r.quantity("direct_volume", v.direct)
            .quantity("boundary_volume", v.boundary)
            .quantity("kappa", v.kappa);
        r.check(Check::within(
            "direct_minus_boundary",
            v.direct - v.boundary,
            0.0,
            bound,
            Source::Derived,
        ));
        r.verdict =
            Some("degenerate angle: projected volume compared with its boundary integral".into());
        return Ok(r);
    }

    let graph = apply_phi_t(&u, m.t).map_err(param)?;
    r.quantity("kappa", graph.kappa);
    r.check(Check::within(
        "kappa",
        graph.kappa,
        1.0,
        KAPPA_TOL,
        Source::Derived,
    ));
    r.attach("phi.csv", graph.to_csv());
    r.attach(
        "phi.json",
        serde_json::to_string_pretty(&graph.sidecar()).map_err(internal)? + "\n",
    );

    let proj = projection_p(&u, m.t).map_err(param)?;
    r.quantity("dp_min_sym_eigenvalue", proj.min_sym_eigenvalue)
        .quantity("dp_uniformly_positive", proj.uniformly_positive);
    let verdict = injectivity_check(&proj.p);
    r.quantity("injectivity", &verdict);

    if !(proj.uniformly_positive && u.mask.is_none()) {
        r.verdict =
            Some("Dp is not uniformly positive; the rotated potential is not reconstructed".into());
        return Ok(r);
    }
    let hat = reconstruct_hat_potential(&u, m.t).map_err(param)?;
    r.quantity("path_residual", hat.path_residual)
        .quantity("antisymmetry", hat.antisymmetry)
        .quantity("loop_residual", hat.loop_residual)
        .quantity("hat_grid", &hat.u_hat.domain);
    if let Potential::Radial(exact) = &params.potential {
        let target = m.sigma_over_tau().powi(2) * exact.rhs().exp();
        let err = hessian_field(&hat.u_hat)
            .map_err(internal)?
            .values
            .iter()
            .map(|h| (h.determinant() - target).abs())
            .fold(0.0, f64::max);
        r.quantity("hat_determinant", target)
            .quantity("hat_determinant_error", err);
    }
    r.attach("u_hat.csv", hat.u_hat.to_csv());
    r.verdict = Some(if verdict.is_injective() {
        "p is injective; rotated potential reconstructed".into()
    } else {
        "p folds although Dp is positive".into()
    });
    Ok(r)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_4;

    use super::*;

    #[test]
    fn radial_solution_round_trips() {
        let exact = RadialTransportSolution::new(std::f64::consts::FRAC_PI_8, 1.0, 0.3).unwrap();
        let p = TransformParams::new(
            exact.constants.t,
            Potential::Radial(exact),
            PlanarBox::square(0.4, 1.2, 33),
        );
        let r = run_transform(&p).unwrap();
        assert!(r.passed, "{}", r.to_json());
        assert!(r.quantities["hat_determinant_error"].as_f64().unwrap() < 0.05);
        assert!(r.artifacts.contains(&"u_hat.csv".to_string()));
    }

    #[test]
    fn quarter_pi_uses_the_degenerate_projection() {
        let pot = Potential::Quadratic {
            l1: 1.0,
            l2: 0.5,
            l12: 0.1,
        };
        let r = run_transform(&TransformParams::new(
            FRAC_PI_4,
            pot,
            PlanarBox::square(0.0, 1.0, 33),
        ))
        .unwrap();
        assert!(r.passed, "{}", r.to_json());
        assert!(r.quantities.contains_key("boundary_volume"));
    }

    #[test]
    fn euclidean_side_rotation() {
        let pot = Potential::Quadratic {
            l1: 1.0,
            l2: 2.0,
            l12: 0.0,
        };
        let r = run_transform(&TransformParams::new(
            1.2,
            pot,
            PlanarBox::square(0.0, 1.0, 17),
        ))
        .unwrap();
        assert!(r.passed, "{}", r.to_json());
    }
}
