//! Finite-difference geometry of sampled potentials and maps: Hessians, Jacobians,
//! graph volumes, the mean-curvature residual and the determinant integrals.

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::equation::{f_t, EquationError, FamilyPoint};
use crate::grid::{
    interior_indices, GridDomain, GridError, InteriorField, Mask, ScalarFieldGrid, VectorFieldGrid,
};
use crate::metric::{
    gram_volume, graph_gram, min_symmetric_eigenvalue, MetricSpec, PlaneError, DEFAULT_TOL,
};

/// Subsamples per axis when estimating how much of a cell a mask covers.
pub const COVERAGE_SUBSAMPLES: usize = 4;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("stencil needs a margin of {needed} nodes but the grid has {resolution} per axis")]
    InsufficientMargin { needed: usize, resolution: usize },
    #[error(
        "graph is not space-like at {location:?} (smallest Gram eigenvalue {min_eigenvalue:e})"
    )]
    NotSpacelike {
        location: Vec<f64>,
        min_eigenvalue: f64,
    },
    #[error("operator undefined at {location:?}: {source}")]
    Operator {
        location: Vec<f64>,
        source: EquationError,
    },
    #[error("field dimension does not match its domain")]
    DimensionMismatch,
}

fn require_margin(domain: &GridDomain, margin: usize) -> Result<(), GeometryError> {
    let smallest = *domain.resolution.iter().min().unwrap_or(&0);
    if smallest < 2 * margin + 1 {
        return Err(GeometryError::InsufficientMargin {
            needed: margin,
            resolution: smallest,
        });
    }
    Ok(())
}

/// Sums in a fixed binary tree so parallel and serial callers agree bit for bit.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Central-difference Hessian at a node with a full stencil.
pub fn hessian_at(values: &[f64], domain: &GridDomain, multi: &[usize]) -> DMatrix<f64> {
    let n = domain.dim();
    let h = domain.spacing();
    let s = domain.strides();
    let c = domain.index(multi);
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        m[(j, j)] = (values[c + s[j]] - 2.0 * values[c] + values[c - s[j]]) / (h[j] * h[j]);
        for k in j + 1..n {
            let v = (values[c + s[j] + s[k]] - values[c + s[j] - s[k]] - values[c - s[j] + s[k]]
                + values[c - s[j] - s[k]])
                / (4.0 * h[j] * h[k]);
            m[(j, k)] = v;
            m[(k, j)] = v;
        }
    }
    m
}

/// Symmetric Hessians on every node one step away from the boundary.
pub fn hessian_field(u: &ScalarFieldGrid) -> Result<InteriorField<DMatrix<f64>>, GeometryError> {
    require_margin(&u.domain, 1)?;
    let nodes = interior_indices(&u.domain, 1);
    let values = nodes
        .par_iter()
        .map(|m| hessian_at(&u.values, &u.domain, m))
        .collect();
    Ok(InteriorField {
        domain: u.domain.clone(),
        margin: 1,
        values,
    })
}

/// Sorted Hessian eigenvalues on the margin-one interior.
pub fn hessian_eigenvalue_field(
    u: &ScalarFieldGrid,
) -> Result<InteriorField<Vec<f64>>, GeometryError> {
    let hess = hessian_field(u)?;
    Ok(hess.map(|m| {
        let mut e: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
        e.sort_by(f64::total_cmp);
        e
    }))
}

/// Derivative along `axis` of a scalar array: central inside, second-order one-sided at the edges.
fn axis_derivative(
    values: &[f64],
    stride: usize,
    domain: &GridDomain,
    multi: &[usize],
    axis: usize,
) -> f64 {
    let h = domain.spacing()[axis];
    let r = domain.resolution[axis];
    let c = domain.index(multi);
    let at = |offset: isize| values[((c as isize + offset) * stride as isize) as usize];
    let s = domain.strides()[axis] as isize;
    let i = multi[axis];
    if i == 0 {
        (-3.0 * at(0) + 4.0 * at(s) - at(2 * s)) / (2.0 * h)
    } else if i + 1 == r {
        (3.0 * at(0) - 4.0 * at(-s) + at(-2 * s)) / (2.0 * h)
    } else {
        (at(s) - at(-s)) / (2.0 * h)
    }
}

/// `grad u` on every node.
pub fn gradient_field(u: &ScalarFieldGrid) -> VectorFieldGrid {
    let d = &u.domain;
    let n = d.dim();
    let values: Vec<f64> = (0..d.len())
        .into_par_iter()
        .flat_map_iter(|flat| {
            let m = d.multi_index(flat);
            (0..n)
                .map(|k| axis_derivative(&u.values, 1, d, &m, k))
                .collect::<Vec<_>>()
        })
        .collect();
    VectorFieldGrid {
        domain: d.clone(),
        values,
        mask: u.mask,
    }
}

/// `DF` at one node, `DF[(j, k)] = dF_j / dx_k`.
pub fn jacobian_at(f: &VectorFieldGrid, flat: usize) -> DMatrix<f64> {
    let d = &f.domain;
    let n = d.dim();
    let m = d.multi_index(flat);
    DMatrix::from_fn(n, n, |j, k| axis_derivative(&f.values[j..], n, d, &m, k))
}

/// `DF` on every node.
pub fn jacobian_field(f: &VectorFieldGrid) -> Vec<DMatrix<f64>> {
    (0..f.domain.len())
        .into_par_iter()
        .map(|i| jacobian_at(f, i))
        .collect()
}

/// Trapezoid weights; with a mask each cell counts by the fraction of it the mask covers.
pub fn quadrature_weights(domain: &GridDomain, mask: Option<&Mask>) -> Vec<f64> {
    let n = domain.dim();
    let h = domain.spacing();
    let Some(mask) = mask else {
        return (0..domain.len())
            .map(|flat| {
                domain
                    .multi_index(flat)
                    .iter()
                    .enumerate()
                    .map(|(k, &i)| {
                        let edge = i == 0 || i + 1 == domain.resolution[k];
                        if edge {
                            0.5 * h[k]
                        } else {
                            h[k]
                        }
                    })
                    .product()
            })
            .collect();
    };

    let cell_dims: Vec<usize> = domain.resolution.iter().map(|r| r - 1).collect();
    let cell_count: usize = cell_dims.iter().product();
    let cell_volume: f64 = h.iter().product();
    let sub = COVERAGE_SUBSAMPLES;
    let sub_total = sub.pow(n as u32);
    let corners = 1usize << n;

    let coverage: Vec<f64> = (0..cell_count)
        .into_par_iter()
        .map(|cell| {
            let lower = unflatten(cell, &cell_dims);
            let origin = domain.coord(&lower);
            let mut hits = 0usize;
            let mut x = vec![0.0; n];
            for s in 0..sub_total {
                let offsets = unflatten(s, &vec![sub; n]);
                for k in 0..n {
                    x[k] = origin[k] + (offsets[k] as f64 + 0.5) / sub as f64 * h[k];
                }
                if mask.contains(&x) {
                    hits += 1;
                }
            }
            hits as f64 / sub_total as f64
        })
        .collect();

    let mut w = vec![0.0; domain.len()];
    for (cell, cov) in coverage.iter().enumerate() {
        if *cov == 0.0 {
            continue;
        }
        let lower = unflatten(cell, &cell_dims);
        let share = cov * cell_volume / corners as f64;
        for corner in 0..corners {
            let node: Vec<usize> = (0..n).map(|k| lower[k] + ((corner >> k) & 1)).collect();
            w[domain.index(&node)] += share;
        }
    }
    w
}

fn unflatten(mut flat: usize, dims: &[usize]) -> Vec<usize> {
    let mut m = vec![0; dims.len()];
    for k in (0..dims.len()).rev() {
        m[k] = flat % dims[k];
        flat /= dims[k];
    }
    m
}

/// Measure of the (masked) domain under the quadrature weights.
pub fn domain_measure(domain: &GridDomain, mask: Option<&Mask>) -> f64 {
    pairwise_sum(&quadrature_weights(domain, mask))
}

fn check_field(f: &VectorFieldGrid) -> Result<(), GeometryError> {
    if f.values.len() != f.domain.len() * f.domain.dim() {
        return Err(GeometryError::DimensionMismatch);
    }
    Ok(())
}

/// Pointwise volume density of the graph `x -> (x, F(x))` on weighted nodes.
pub fn graph_volume_density(
    f: &VectorFieldGrid,
    metric: MetricSpec,
    weights: &[f64],
) -> Result<Vec<f64>, GeometryError> {
    check_field(f)?;
    (0..f.domain.len())
        .into_par_iter()
        .map(|i| {
            if weights[i] == 0.0 {
                return Ok(0.0);
            }
            let q = jacobian_at(f, i).transpose();
            let gram = graph_gram(&q, metric);
            gram_volume(&gram, DEFAULT_TOL).map_err(|e| match e {
                PlaneError::NotSpacelike { min_eigenvalue } => GeometryError::NotSpacelike {
                    location: f.domain.node_coord(i),
                    min_eigenvalue,
                },
                other => unreachable!("gram_volume only reports space-likeness: {other}"),
            })
        })
        .collect()
}

/// `Vol(Gamma)` for `Gamma = {(x, F(x))}` under `metric`.
pub fn graph_volume(f: &VectorFieldGrid, metric: MetricSpec) -> Result<f64, GeometryError> {
    let w = quadrature_weights(&f.domain, f.mask.as_ref());
    let density = graph_volume_density(f, metric, &w)?;
    let terms: Vec<f64> = density.iter().zip(&w).map(|(d, w)| d * w).collect();
    Ok(pairwise_sum(&terms))
}

/// `F^t(D^2 u)` on the margin-one interior.
pub fn operator_field(u: &ScalarFieldGrid, t: f64) -> Result<InteriorField<f64>, GeometryError> {
    let point = FamilyPoint::new(t, 0.0).map_err(|source| GeometryError::Operator {
        location: vec![],
        source,
    })?;
    let hess = hessian_field(u)?;
    let nodes = hess.node_indices();
    let values = hess
        .values
        .par_iter()
        .zip(nodes.par_iter())
        .map(|(h, m)| {
            let location = || u.domain.coord(m);
            let gram_min = spacelike_margin(h, t);
            if gram_min <= 0.0 {
                return Err(GeometryError::NotSpacelike {
                    location: location(),
                    min_eigenvalue: gram_min,
                });
            }
            let eig: Vec<f64> = h.clone().symmetric_eigenvalues().iter().copied().collect();
            f_t(&eig, &point).map_err(|source| GeometryError::Operator {
                location: location(),
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(InteriorField {
        domain: u.domain.clone(),
        margin: 1,
        values,
    })
}

/// Smallest eigenvalue of the `g_t` Gram of the gradient graph with Hessian `h`.
pub fn spacelike_margin(h: &DMatrix<f64>, t: f64) -> f64 {
    min_symmetric_eigenvalue(&graph_gram(h, MetricSpec::Family(t)))
}

/// `|grad_h F^t(D^2_h u)|` on the margin-two interior; vanishes to `O(h^2)` exactly
/// when the gradient graph is `g_t`-extremal.
pub fn mean_curvature_residual(
    u: &ScalarFieldGrid,
    t: f64,
) -> Result<InteriorField<f64>, GeometryError> {
    require_margin(&u.domain, 2)?;
    let op = operator_field(u, t)?;
    let d = &u.domain;
    let n = d.dim();
    let h = d.spacing();
    let nodes = interior_indices(d, 2);
    let values = nodes
        .par_iter()
        .map(|m| {
            let mut norm2 = 0.0;
            for k in 0..n {
                let mut up = m.clone();
                let mut down = m.clone();
                up[k] += 1;
                down[k] -= 1;
                let g = (op.get(&up).unwrap() - op.get(&down).unwrap()) / (2.0 * h[k]);
                norm2 += g * g;
            }
            norm2.sqrt()
        })
        .collect();
    Ok(InteriorField {
        domain: d.clone(),
        margin: 2,
        values,
    })
}

/// `integral of det DF` over the (masked) domain.
pub fn null_lagrangian_integral(f: &VectorFieldGrid) -> f64 {
    let w = quadrature_weights(&f.domain, f.mask.as_ref());
    let terms: Vec<f64> = (0..f.domain.len())
        .into_par_iter()
        .map(|i| {
            if w[i] == 0.0 {
                0.0
            } else {
                w[i] * jacobian_at(f, i).determinant()
            }
        })
        .collect();
    pairwise_sum(&terms)
}

/// `integral of Phi_c` over the graph of `F`: `(c |Omega| + (1/c) integral det DF) / 2`.
pub fn calibration_integral(f: &VectorFieldGrid, c: f64) -> Result<f64, GeometryError> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(GeometryError::Operator {
            location: vec![],
            source: EquationError::Angle(PlaneError::NonPositiveConstant(c)),
        });
    }
    let area = domain_measure(&f.domain, f.mask.as_ref());
    Ok(0.5 * (c * area + null_lagrangian_integral(f) / c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn unit(res: usize) -> GridDomain {
        GridDomain::cube(2, 0.0, 1.0, res).unwrap()
    }

    fn half_square(x: &[f64]) -> f64 {
        0.5 * x.iter().map(|v| v * v).sum::<f64>()
    }

    fn identity_field(d: GridDomain, c: f64) -> VectorFieldGrid {
        VectorFieldGrid::from_fn(d, |x| x.iter().map(|v| c * v).collect()).unwrap()
    }

    #[test]
    fn hessian_of_quadratics_is_exact() {
        let u = ScalarFieldGrid::from_fn(unit(9), half_square).unwrap();
        for h in hessian_field(&u).unwrap().values {
            assert!((h - DMatrix::identity(2, 2)).amax() < 1e-11);
        }
        let u = ScalarFieldGrid::from_fn(unit(9), |x| x[0] * x[1]).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        for h in hessian_field(&u).unwrap().values {
            assert!((h - &want).amax() < 1e-11);
        }
        let d3 = GridDomain::cube(3, -1.0, 1.0, 7).unwrap();
        let u = ScalarFieldGrid::from_fn(d3, |x| x[0] * x[2] + 2.0 * x[1] * x[1]).unwrap();
        let want = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 1.0, 0.0, 4.0, 0.0, 1.0, 0.0, 0.0]);
        for h in hessian_field(&u).unwrap().values {
            assert!((h - &want).amax() < 1e-11);
        }
    }

    #[test]
    fn small_grid_is_rejected() {
        let d = GridDomain::cube(2, 0.0, 1.0, 5).unwrap();
        let u = ScalarFieldGrid::from_fn(d, half_square).unwrap();
        assert!(hessian_field(&u).is_ok());
        assert!(mean_curvature_residual(&u, 1.0).is_ok());
    }

    #[test]
    fn gradient_and_jacobian_exact_on_quadratics() {
        let u = ScalarFieldGrid::from_fn(unit(7), |x| x[0] * x[0] + 3.0 * x[0] * x[1]).unwrap();
        let g = gradient_field(&u);
        for i in 0..u.domain.len() {
            let x = u.domain.node_coord(i);
            assert_relative_eq!(g.node(i)[0], 2.0 * x[0] + 3.0 * x[1], epsilon = 1e-12);
            assert_relative_eq!(g.node(i)[1], 3.0 * x[0], epsilon = 1e-12);
        }
        let f = VectorFieldGrid::from_fn(unit(7), |x| vec![x[0] * x[1], x[1] * x[1]]).unwrap();
        let j = jacobian_at(&f, 0);
        assert!((j - DMatrix::zeros(2, 2)).amax() < 1e-12);
        let last = f.domain.len() - 1;
        let j = jacobian_at(&f, last);
        let want = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 2.0]);
        assert!((j - want).amax() < 1e-12);
    }

    #[test]
    fn trapezoid_weights_sum_to_measure() {
        let d = GridDomain::new(vec![[0.0, 2.0], [-1.0, 0.5]], vec![9, 6]).unwrap();
        assert_relative_eq!(domain_measure(&d, None), 3.0, epsilon = 1e-14);
        let d3 = GridDomain::cube(3, 0.0, 1.0, 5).unwrap();
        assert_relative_eq!(domain_measure(&d3, None), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn volume_examples() {
        let f = identity_field(unit(9), 1.0);
        assert_relative_eq!(
            graph_volume(&f, MetricSpec::DxDy).unwrap(),
            1.0,
            epsilon = 1e-13
        );
        let d = GridDomain::new(vec![[0.0, 2.0], [0.0, 1.5]], vec![9, 9]).unwrap();
        let f = identity_field(d, 2.5);
        assert_relative_eq!(
            graph_volume(&f, MetricSpec::DxDy).unwrap(),
            2.5 * 3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn annulus_volume_close_to_area() {
        let eps = 0.01;
        let r = (1.0f64 + eps).sqrt() + 0.01;
        let d = GridDomain::cube(2, -r, r, 256).unwrap();
        let f = identity_field(d, 1.0).with_mask(Mask::annulus(1.0, 1.0 + eps).unwrap());
        let v = graph_volume(&f, MetricSpec::DxDy).unwrap();
        assert!((v / (PI * eps) - 1.0).abs() < 0.02, "{v}");
    }

    #[test]
    fn conformal_factor_between_dxdy_and_family_zero() {
        let f = VectorFieldGrid::from_fn(unit(11), |x| {
            vec![2.0 * x[0] + 0.1 * x[1] * x[1], x[1] + 0.2 * x[0]]
        })
        .unwrap();
        let a = graph_volume(&f, MetricSpec::DxDy).unwrap();
        let b = graph_volume(&f, MetricSpec::Family(0.0)).unwrap();
        assert_relative_eq!(b, 2.0 * a, max_relative = 1e-12);
    }

    #[test]
    fn volume_reports_location() {
        let f = identity_field(unit(5), -1.0);
        match graph_volume(&f, MetricSpec::DxDy) {
            Err(GeometryError::NotSpacelike { location, .. }) => {
                assert_eq!(location, vec![0.0, 0.0])
            }
            other => panic!("expected NotSpacelike, got {other:?}"),
        }
    }

    #[test]
    fn quadratic_residual_vanishes() {
        for t in [0.0, 0.3, 1.0, FRAC_PI_2] {
            let u = ScalarFieldGrid::from_fn(unit(11), |x| {
                x[0] * x[0] + 0.3 * x[0] * x[1] + 0.7 * x[1] * x[1]
            })
            .unwrap();
            assert!(mean_curvature_residual(&u, t).unwrap().max_abs() < 1e-8);
        }
    }

    #[test]
    fn quartic_residual_stays_away_from_zero() {
        let mut last = None;
        for res in [17, 33, 65] {
            let u = ScalarFieldGrid::from_fn(unit(res), |x| x[0].powi(4) + x[1].powi(4)).unwrap();
            let r = mean_curvature_residual(&u, FRAC_PI_2).unwrap().max_abs();
            assert!(r > 0.1);
            if let Some(prev) = last {
                assert!((r - prev as f64).abs() / r < 0.2);
            }
            last = Some(r);
        }
    }

    #[test]
    fn null_lagrangian_examples() {
        let f = identity_field(unit(17), 1.0);
        assert_relative_eq!(null_lagrangian_integral(&f), 1.0, epsilon = 1e-13);

        let bump = |x: &[f64]| -> f64 {
            let s = |v: f64| {
                let z = (v - 0.5) / 0.3;
                if z.abs() < 1.0 {
                    (1.0 - z * z).powi(4)
                } else {
                    0.0
                }
            };
            s(x[0]) * s(x[1])
        };
        let perturbed = VectorFieldGrid::from_fn(unit(33), |x| {
            vec![
                x[0] + 0.1 * bump(x) * (3.0 * x[1]).sin(),
                x[1] + 0.1 * bump(x) * x[0],
            ]
        })
        .unwrap();
        assert_relative_eq!(null_lagrangian_integral(&perturbed), 1.0, epsilon = 1e-13);
        assert_relative_eq!(
            calibration_integral(&perturbed, 1.0).unwrap(),
            1.0,
            epsilon = 1e-13
        );
        let vol = graph_volume(&perturbed, MetricSpec::DxDy).unwrap();
        assert!(vol < 1.0 - 1e-6, "{vol}");

        let leaking =
            VectorFieldGrid::from_fn(unit(33), |x| vec![x[0] + 0.1 * x[0] * x[1], x[1]]).unwrap();
        assert!((null_lagrangian_integral(&leaking) - 1.0).abs() > 1e-2);
    }

    #[test]
    fn calibration_with_wrong_phase() {
        let f = identity_field(unit(9), 1.0);
        assert_relative_eq!(
            calibration_integral(&f, 2.0).unwrap(),
            1.25,
            epsilon = 1e-13
        );
        let g = identity_field(unit(9), 2f64.sqrt());
        assert_relative_eq!(
            calibration_integral(&g, 2f64.sqrt()).unwrap(),
            graph_volume(&g, MetricSpec::DxDy).unwrap(),
            epsilon = 1e-12
        );
        assert!(calibration_integral(&f, 0.0).is_err());
    }

    #[test]
    fn pairwise_sum_matches_serial_on_integers() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499500.0);
    }
}
