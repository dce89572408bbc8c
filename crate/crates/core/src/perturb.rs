//! Seeded, compactly supported vector fields for competitor surfaces.
//!
//! Every field vanishes on the outer three rings of nodes, so both the boundary
//! values and the one-sided boundary derivatives of `F + V` agree with those of `F`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::jacobian_field;
use crate::grid::{GridDomain, VectorFieldGrid};

/// Rings of nodes next to the boundary on which every perturbation is zero.
pub const CLEAR_RINGS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    /// `V = grad phi`, so `D(F + V)` stays symmetric when `DF` is.
    Gradient,
    /// Independent bumps per component; `DV` is not symmetric.
    NonGradient,
}

/// `(1 - s^2)^4` on `|s| < 1` and its derivative.
fn bump(s: f64) -> (f64, f64) {
    if s.abs() >= 1.0 {
        return (0.0, 0.0);
    }
    let q = 1.0 - s * s;
    (q.powi(4), -8.0 * s * q.powi(3))
}

#[derive(Clone, Debug)]
struct TensorBump {
    center: Vec<f64>,
    radius: Vec<f64>,
}

impl TensorBump {
    fn random(domain: &GridDomain, rng: &mut ChaCha8Rng) -> Self {
        let h = domain.spacing();
        let (center, radius) = domain
            .bounds
            .iter()
            .zip(&h)
            .map(|(b, &hk)| {
                let lo = b[0] + CLEAR_RINGS as f64 * hk;
                let hi = b[1] - CLEAR_RINGS as f64 * hk;
                let half = 0.5 * (hi - lo);
                let r = rng.gen_range(0.3..0.95) * half;
                let c = rng.gen_range(lo + r..=hi - r);
                (c, r)
            })
            .unzip();
        Self { center, radius }
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let parts: Vec<(f64, f64)> = x
            .iter()
            .zip(&self.center)
            .zip(&self.radius)
            .map(|((xi, c), r)| {
                let (v, d) = bump((xi - c) / r);
                (v, d / r)
            })
            .collect();
        let value = parts.iter().map(|p| p.0).product();
        let grad = (0..x.len())
            .map(|k| {
                parts
                    .iter()
                    .enumerate()
                    .map(|(j, p)| if j == k { p.1 } else { p.0 })
                    .product()
            })
            .collect();
        (value, grad)
    }
}

/// A random perturbation scaled so that `max |DV|` (Frobenius, discrete) equals `strength`.
pub fn random_perturbation(
    domain: &GridDomain,
    kind: PerturbationKind,
    strength: f64,
    rng: &mut ChaCha8Rng,
) -> VectorFieldGrid {
    let n = domain.dim();
    let field = match kind {
        PerturbationKind::Gradient => {
            let bump = TensorBump::random(domain, rng);
            VectorFieldGrid::from_fn(domain.clone(), |x| bump.value_and_gradient(x).1)
        }
        PerturbationKind::NonGradient => {
            let bumps: Vec<TensorBump> = (0..n).map(|_| TensorBump::random(domain, rng)).collect();
            let mix: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            VectorFieldGrid::from_fn(domain.clone(), |x| {
                let vals: Vec<f64> = bumps.iter().map(|b| b.value_and_gradient(x).0).collect();
                (0..n)
                    .map(|j| (0..n).map(|k| mix[j * n + k] * vals[k]).sum())
                    .collect()
            })
        }
    }
    .expect("bump fields are finite");

    let largest = jacobian_field(&field)
        .iter()
        .map(|j| j.norm())
        .fold(0.0, f64::max);
    let scale = if largest > 0.0 {
        strength / largest
    } else {
        0.0
    };
    VectorFieldGrid {
        values: field.values.iter().map(|v| v * scale).collect(),
        ..field
    }
}

/// `count` perturbations alternating between the two kinds, strengths drawn from `strength`.
pub fn perturbation_family(
    domain: &GridDomain,
    count: usize,
    strength: std::ops::Range<f64>,
    seed: u64,
) -> Vec<(PerturbationKind, VectorFieldGrid)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let kind = if i % 2 == 0 {
                PerturbationKind::Gradient
            } else {
                PerturbationKind::NonGradient
            };
            let s = rng.gen_range(strength.clone());
            (kind, random_perturbation(domain, kind, s, &mut rng))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fields_clear_the_boundary_rings() {
        let d = GridDomain::cube(2, 0.0, 1.0, 33).unwrap();
        for (_, v) in perturbation_family(&d, 6, 0.1..0.3, 7) {
            for i in 0..d.len() {
                let m = d.multi_index(i);
                if !d.in_interior(&m, CLEAR_RINGS) {
                    assert!(v.node(i).iter().all(|x| *x == 0.0), "{m:?}");
                }
            }
        }
    }

    #[test]
    fn strength_is_respected() {
        let d = GridDomain::cube(2, -1.0, 1.0, 41).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_perturbation(&d, PerturbationKind::NonGradient, 0.25, &mut rng);
        let top = jacobian_field(&v)
            .iter()
            .map(|j| j.norm())
            .fold(0.0, f64::max);
        assert!((top - 0.25).abs() < 1e-12);
    }

    #[test]
    fn gradient_kind_has_nearly_symmetric_jacobian() {
        let d = GridDomain::cube(2, 0.0, 1.0, 65).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = random_perturbation(&d, PerturbationKind::Gradient, 0.3, &mut rng);
        let worst = jacobian_field(&v)
            .iter()
            .map(|j| (j - j.transpose()).amax())
            .fold(0.0, f64::max);
        assert!(worst < 1e-2, "{worst}");
    }

    #[test]
    fn same_seed_same_family() {
        let d = GridDomain::cube(2, 0.0, 1.0, 17).unwrap();
        let a = perturbation_family(&d, 3, 0.1..0.2, 99);
        let b = perturbation_family(&d, 3, 0.1..0.2, 99);
        assert_eq!(a, b);
    }
}
