//! Brute-force maximality: boundary-fixing perturbations of a calibrated gradient
//! graph never gain volume, and the calibration integral does not move.

use std::path::PathBuf;

use serde::Serialize;
use slag_core::geometry::{
    calibration_integral, gradient_field, graph_volume, hessian_field, GeometryError,
};
use slag_core::perturb::{perturbation_family, PerturbationKind};
use slag_core::{MetricSpec, VectorFieldGrid};

use super::{PlanarBox, Potential};
use crate::config::{ensure, ConfigError, Params};
use crate::report::{csv, Check, Comparison, ExperimentReport, Source};
use crate::{internal, LabError};

/// Gap tolerance at 128 cells per axis; it scales with `h^2`.
pub const GAP_TOL_128: f64 = 1e-3;
/// Allowed spread of the calibration integral across competitors.
pub const CALIBRATION_TOL: f64 = 1e-6;
/// Times a perturbation is halved before giving up on space-likeness.
const MAX_HALVINGS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSource {
    /// `c |x|^2 / 2` on `[lo, hi]^2`.
    Quadratic {
        lo: f64,
        hi: f64,
        resolution: usize,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MaximalityParams {
    pub source: PotentialSource,
    pub c: f64,
    pub perturbations: usize,
    pub seed: u64,
    pub strength: [f64; 2],
    /// Largest `|det D^2 u - c^2|` accepted from the source.
    pub residual_tol: f64,
}

impl MaximalityParams {
    pub fn quadratic(c: f64, resolution: usize, perturbations: usize, seed: u64) -> Self {
        Self {
            source: PotentialSource::Quadratic {
                lo: -1.0,
                hi: 1.0,
                resolution,
            },
            c,
            perturbations,
            seed,
            strength: [0.05, 0.5],
            residual_tol: 1e-8,
        }
    }

    pub fn from_params(p: &Params) -> Result<Self, LabError> {
        let source = match p.string("potential", "quadratic").as_str() {
            "quadratic" => PotentialSource::Quadratic {
                lo: p.f64("lo", -1.0)?,
                hi: p.f64("hi", 1.0)?,
                resolution: p.usize("resolution", 129)?,
            },
            "file" => PotentialSource::File {
                path: p
                    .path("potential_file")
                    .ok_or_else(|| ConfigError::Invalid {
                        key: "potential_file".into(),
                        value: String::new(),
                        expected: "a grid file path when potential = file",
                    })?,
            },
            other => {
                return Err(ConfigError::Invalid {
                    key: "potential".into(),
                    value: other.into(),
                    expected: "quadratic or file",
                }
                .into())
            }
        };
        Ok(Self {
            source,
            c: p.f64("c", 1.0)?,
            perturbations: p.usize("perturbations", 100)?,
            seed: p.u64("seed", 7)?,
            strength: [p.f64("strength_min", 0.05)?, p.f64("strength_max", 0.5)?],
            residual_tol: p.f64("residual_tol", 1e-8)?,
        })
    }
}

pub fn run_maximality_test(params: &MaximalityParams) -> Result<ExperimentReport, LabError> {
    let c = params.c;
    ensure(c > 0.0, "c", c, "(0, inf)")?;
    let [smin, smax] = params.strength;
    ensure(
        smin > 0.0 && smax > smin,
        "strength_max",
        smax,
        "(strength_min, inf) with strength_min > 0",
    )?;
    let u = match &params.source {
        PotentialSource::Quadratic { lo, hi, resolution } => {
            let b = PlanarBox::from_params(
                &Params::default(),
                PlanarBox::square(*lo, *hi, *resolution),
            )?;
            Potential::Quadratic {
                l1: c,
                l2: c,
                l12: 0.0,
            }
            .grid(&b.domain()?)?
        }
        PotentialSource::File { path } => {
            Potential::File(path.clone()).grid(&PlanarBox::square(0.0, 1.0, 5).domain()?)?
        }
    };
    let d = u.domain.clone();
    ensure(d.dim() == 2, "potential", d.dim(), "two-dimensional grids")?;
    let target = c.powi(2);
    let residual = hessian_field(&u)
        .map_err(internal)?
        .values
        .iter()
        .map(|h| (h.determinant() - target).abs())
        .fold(0.0, f64::max);
    if !(residual <= params.residual_tol) {
        return Err(LabError::Parameter(format!(
            "source potential does not solve det D^2 u = c^2: residual {residual:e} exceeds {:e}",
            params.residual_tol
        )));
    }

    let base = gradient_field(&u);
    let base = VectorFieldGrid {
        mask: u.mask,
        ..base
    };
    let vol = graph_volume(&base, MetricSpec::DxDy).map_err(internal)?;
    let cal = calibration_integral(&base, c).map_err(internal)?;

    let mut r = ExperimentReport::new("maximality");
    r.input("params", params);
    r.quantity("source_residual", residual)
        .quantity("vol_gamma", vol)
        .quantity("calibration_gamma", cal)
        .quantity("h", d.h());
    if matches!(params.source, PotentialSource::Quadratic { .. }) {
        let exact = c * d.measure();
        r.check(Check::within(
            "vol_gamma",
            vol,
            exact,
            1e-10 * exact,
            Source::Trivial,
        ));
    }
    r.check(Check::within(
        "calibration_gamma",
        cal,
        vol,
        1e-8 * vol.abs().max(1.0),
        Source::Reference,
    ));

    let cells = (d.resolution[0] - 1) as f64;
    let gap_tol = GAP_TOL_128 * (128.0 / cells).powi(2);
    let mut rows = Vec::with_capacity(params.perturbations);
    let mut halvings = 0usize;
    for (i, (kind, v)) in perturbation_family(&d, params.perturbations, smin..smax, params.seed)
        .into_iter()
        .enumerate()
    {
        let mut scale = 1.0;
        let (f, v_vol) = loop {
            let scaled = VectorFieldGrid {
                values: v.values.iter().map(|x| x * scale).collect(),
                ..v.clone()
            };
            let f = base.add(&scaled).map_err(internal)?;
            match graph_volume(&f, MetricSpec::DxDy) {
                Ok(vv) => break (f, vv),
                Err(GeometryError::NotSpacelike { .. })
                    if halvings < MAX_HALVINGS * params.perturbations =>
                {
                    scale *= 0.5;
                    halvings += 1;
                }
                Err(e) => return Err(internal(e)),
            }
        };
        let fc = calibration_integral(&f, c).map_err(internal)?;
        let kind_code = match kind {
            PerturbationKind::Gradient => 0.0,
            PerturbationKind::NonGradient => 1.0,
        };
        rows.push(vec![i as f64, kind_code, scale, v_vol - vol, fc - cal]);
    }

    r.quantity("perturbations", rows.len())
        .quantity("halvings", halvings);
    if !rows.is_empty() {
        let gaps = |code: Option<f64>| {
            rows.iter()
                .filter(|row| code.is_none_or(|k| row[1] == k))
                .map(|row| row[3])
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let max_gap = gaps(None);
        let spread = rows.iter().map(|row| row[4].abs()).fold(0.0, f64::max);
        r.quantity("max_gap", max_gap)
            .quantity("max_gap_gradient", gaps(Some(0.0)))
            .quantity("max_gap_non_gradient", gaps(Some(1.0)))
            .quantity("calibration_spread", spread)
            .quantity("gap_tolerance", gap_tol);
        r.check(Check::new(
            "max_gap",
            max_gap,
            0.0,
            gap_tol,
            Comparison::AtMost,
            Source::Derived,
        ));
        r.check(Check::at_most(
            "calibration_spread",
            spread,
            CALIBRATION_TOL,
            Source::Derived,
        ));
        r.attach(
            "gaps.csv",
            csv(
                &[
                    "index",
                    "non_gradient",
                    "scale",
                    "volume_gap",
                    "calibration_shift",
                ],
                rows,
            ),
        );
    }
    r.verdict = Some(if r.passed {
        "no competitor exceeds the calibrated volume".into()
    } else {
        "a competitor exceeds the calibrated volume beyond tolerance".into()
    });
    Ok(r)
}
