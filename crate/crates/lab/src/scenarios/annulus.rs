//! The thin-annulus counterexample: with a disconnected competitor the volume
//! comparison fails although boundaries agree.

use std::f64::consts::PI;

use slag_core::geometry::{domain_measure, graph_volume, GeometryError};
use slag_core::{GridDomain, Mask, MetricSpec, VectorFieldGrid};

use crate::config::ensure;
use crate::report::{Check, ExperimentReport, Source};
use crate::{internal, param, LabError};

/// Relative tolerance on the volumes against the exact areas.
const AREA_TOL: f64 = 0.02;

fn masked_volume(
    radius: f64,
    resolution: usize,
    mask: Mask,
    field: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<f64, LabError> {
    let d = GridDomain::cube(2, -radius, radius, resolution).map_err(param)?;
    let f = VectorFieldGrid::from_fn(d, field)
        .map_err(internal)?
        .with_mask(mask);
    match graph_volume(&f, MetricSpec::DxDy) {
        Ok(v) => Ok(v),
        Err(e @ GeometryError::NotSpacelike { .. }) => Err(LabError::Parameter(format!(
            "competitor graph is not space-like: {e}"
        ))),
        Err(e) => Err(internal(e)),
    }
}

/// Builds `Gamma` over `1 <= |x|^2 <= 1 + eps` and the two-disk competitor
/// `Sigma = Sigma_1 u Sigma_2` with the same boundary, `Sigma_2` bent by
/// `eta (1 - |x|^2 / (1 + eps))^2 (1, 1)`.
pub fn run_counterexample_annulus(
    eps: f64,
    eta: f64,
    resolution: usize,
) -> Result<ExperimentReport, LabError> {
    ensure(eps > 0.0 && eps <= 0.2, "eps", eps, "(0, 0.2]")?;
    ensure(eta.abs() <= 2.0, "eta", eta, "[-2, 2]")?;
    ensure(resolution >= 17, "resolution", resolution, "[17, inf)")?;
    let outer2 = 1.0 + eps;
    let outer = outer2.sqrt();

    let identity = |x: &[f64]| x.to_vec();
    let annulus = Mask::annulus(1.0, outer2).map_err(param)?;
    let vol_gamma = masked_volume(outer, resolution, annulus, identity)?;
    let vol_sigma1 = masked_volume(
        1.0,
        resolution,
        Mask::annulus(0.0, 1.0).map_err(param)?,
        identity,
    )?;
    let bent = |x: &[f64]| {
        let s = 1.0 - (x[0] * x[0] + x[1] * x[1]) / outer2;
        let bump = eta * s.max(0.0).powi(2);
        vec![x[0] + bump, x[1] + bump]
    };
    let vol_sigma2 = masked_volume(
        outer,
        resolution,
        Mask::annulus(0.0, outer2).map_err(param)?,
        bent,
    )?;
    let vol_sigma = vol_sigma1 + vol_sigma2;

    let mut r = ExperimentReport::new("annulus");
    r.input("eps", eps)
        .input("eta", eta)
        .input("resolution", resolution);
    let d = GridDomain::cube(2, -outer, outer, resolution).map_err(param)?;
    r.quantity("annulus_area", domain_measure(&d, Some(&annulus)))
        .quantity("vol_gamma", vol_gamma)
        .quantity("vol_sigma1", vol_sigma1)
        .quantity("vol_sigma2", vol_sigma2)
        .quantity("vol_sigma", vol_sigma);

    let area_gamma = PI * eps;
    let area_sigma = 2.0 * PI + PI * eps;
    r.check(Check::within(
        "vol_gamma",
        vol_gamma,
        area_gamma,
        AREA_TOL * area_gamma,
        Source::Reference,
    ));
    r.check(Check::within(
        "vol_sigma",
        vol_sigma,
        area_sigma,
        AREA_TOL * area_sigma,
        Source::Reference,
    ));
    r.check(Check::at_least(
        "vol_sigma_minus_vol_gamma",
        vol_sigma - vol_gamma,
        0.0,
        Source::Reference,
    ));
    if vol_sigma > vol_gamma {
        r.verdict = Some("inequality violated as designed (disconnected Sigma)".into());
    } else {
        r.verdict = Some("no violation observed".into());
    }
    Ok(r)
}
