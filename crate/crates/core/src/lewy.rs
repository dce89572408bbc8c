//! The rotations `phi_t(x, y) = (sigma x + tau y, tau x + sigma y)` acting on gradient
//! graphs, the projections `p` and `q`, and the degenerate projection at `t = pi/4`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    gradient_field, graph_volume, hessian_field, jacobian_at, jacobian_field, GeometryError,
};
use crate::grid::{interior_indices, GridDomain, GridError, ScalarFieldGrid, VectorFieldGrid};
use crate::metric::{graph_gram, MetricConstants, MetricSpec, PlaneError, Regime};

/// Relative spread allowed in the measured conformal factor.
pub const KAPPA_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum LewyError {
    #[error(transparent)]
    Angle(#[from] PlaneError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("the rotation degenerates at t = pi/4; use the degenerate projection instead")]
    DegenerateAngle,
    #[error("conformal factor is not constant: spread {spread:e} around {kappa}")]
    InconsistentKappa { kappa: f64, spread: f64 },
    #[error("Dp is not uniformly positive (smallest symmetric eigenvalue {min_eigenvalue:e})")]
    NotMonotone { min_eigenvalue: f64 },
    #[error("reconstruction needs an unmasked rectangular domain")]
    MaskedDomain,
    #[error("could not invert p on an inscribed target box")]
    InversionFailed,
    #[error("I + DF is nearly singular at {location:?} (smallest singular value {sigma_min:e})")]
    NearSingular { location: Vec<f64>, sigma_min: f64 },
}

/// The rotation as a `2n x 2n` matrix.
pub fn phi_matrix(constants: &MetricConstants, n: usize) -> DMatrix<f64> {
    let (s, t) = (constants.sigma, constants.tau);
    DMatrix::from_fn(2 * n, 2 * n, |i, j| {
        if i == j {
            s
        } else if i % n == j % n {
            t
        } else {
            0.0
        }
    })
}

/// Metric on the target side: `g_0` below `pi/4`, Euclidean above.
pub fn target_metric(constants: &MetricConstants) -> Result<MetricSpec, LewyError> {
    match constants.regime {
        Regime::Pseudo => Ok(MetricSpec::Family(0.0)),
        Regime::Euclidean => Ok(MetricSpec::Euclidean),
        Regime::Degenerate => Err(LewyError::DegenerateAngle),
    }
}

/// Image of a gradient graph under `phi_t`, sampled on the margin-one interior.
#[derive(Clone, Debug)]
pub struct TransformedGraph {
    pub source_domain: GridDomain,
    pub margin: usize,
    /// Node-major `(x_hat, y_hat)` rows of length `2n`.
    pub images: Vec<f64>,
    /// Graph matrices `Q_hat = (sigma + tau H)^{-1} (tau + sigma H)`; `None` where the
    /// image plane is vertical.
    pub tangents: Vec<Option<DMatrix<f64>>>,
    pub constants: MetricConstants,
    pub target: MetricSpec,
    pub kappa: f64,
}

impl TransformedGraph {
    pub fn len(&self) -> usize {
        self.tangents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tangents.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let n = self.source_domain.dim();
        let mut cols: Vec<String> = (1..=n).map(|k| format!("x_{k}")).collect();
        cols.extend((1..=n).map(|k| format!("y_{k}")));
        let mut out = cols.join(",");
        out.push('\n');
        for row in self.images.chunks(2 * n) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "t": self.constants.t,
            "kappa": self.kappa,
            "provenance": {
                "map": "phi_t",
                "sigma": self.constants.sigma,
                "tau": self.constants.tau,
                "target_metric": self.target,
                "source_domain": self.source_domain,
                "margin": self.margin,
                "samples": self.len(),
            }
        })
    }
}

fn gram_of_basis(b: &DMatrix<f64>, metric: MetricSpec) -> DMatrix<f64> {
    let m = metric.matrix(b.ncols() / 2);
    b * m * b.transpose()
}

/// Applies `phi_t` to the gradient graph of `u` and measures the conformal factor.
pub fn apply_phi_t(u: &ScalarFieldGrid, t: f64) -> Result<TransformedGraph, LewyError> {
    let constants = MetricConstants::new(t)?;
    let target = target_metric(&constants)?;
    let d = &u.domain;
    let n = d.dim();
    let grad = gradient_field(u);
    let hess = hessian_field(u)?;
    let nodes = hess.node_indices();
    let (s, tau) = (constants.sigma, constants.tau);
    let phi = phi_matrix(&constants, n);
    let source_metric = MetricSpec::Family(constants.t);
    let eye = DMatrix::<f64>::identity(n, n);

    let per_node: Vec<(Vec<f64>, Option<DMatrix<f64>>, Option<f64>)> = nodes
        .par_iter()
        .zip(hess.values.par_iter())
        .map(|(m, h)| {
            let x = d.coord(m);
            let y = grad.node(d.index(m));
            let mut img = Vec::with_capacity(2 * n);
            img.extend((0..n).map(|k| s * x[k] + tau * y[k]));
            img.extend((0..n).map(|k| tau * x[k] + s * y[k]));

            let dp = &eye * s + h * tau;
            let dq = &eye * tau + h * s;
            let q_hat = dp.clone().try_inverse().map(|inv| inv * &dq);

            let mut basis = DMatrix::zeros(n, 2 * n);
            basis.view_mut((0, 0), (n, n)).copy_from(&eye);
            basis.view_mut((0, n), (n, n)).copy_from(h);
            let before = graph_gram(h, source_metric);
            let after = gram_of_basis(&(&basis * phi.transpose()), target);
            let norm = before.norm_squared();
            let ratio = (norm > 1e-300).then(|| before.dot(&after) / norm);
            (img, q_hat, ratio)
        })
        .collect();

    let ratios: Vec<f64> = per_node.iter().filter_map(|r| r.2).collect();
    let kappa = ratios.iter().sum::<f64>() / ratios.len().max(1) as f64;
    let spread = ratios
        .iter()
        .map(|r| (r - kappa).abs() / kappa.abs())
        .fold(0.0, f64::max);
    if !(kappa > 0.0) || spread > KAPPA_TOL {
        return Err(LewyError::InconsistentKappa { kappa, spread });
    }

    let mut images = Vec::with_capacity(per_node.len() * 2 * n);
    let mut tangents = Vec::with_capacity(per_node.len());
    for (img, q, _) in per_node {
        images.extend(img);
        tangents.push(q);
    }
    Ok(TransformedGraph {
        source_domain: d.clone(),
        margin: 1,
        images,
        tangents,
        constants,
        target,
        kappa,
    })
}

#[derive(Clone, Debug)]
pub struct ProjectionRecord {
    /// `p = sigma x + tau grad u` on every node.
    pub p: VectorFieldGrid,
    /// `Dp = sigma I + tau D^2 u` on the margin-one interior.
    pub dp: Vec<DMatrix<f64>>,
    pub min_sym_eigenvalue: f64,
    pub uniformly_positive: bool,
}

pub fn projection_p(u: &ScalarFieldGrid, t: f64) -> Result<ProjectionRecord, LewyError> {
    let constants = MetricConstants::new(t)?;
    let (s, tau) = (constants.sigma, constants.tau);
    let d = &u.domain;
    let n = d.dim();
    let grad = gradient_field(u);
    let values = (0..d.len())
        .flat_map(|i| {
            let x = d.node_coord(i);
            let y = grad.node(i).to_vec();
            (0..n).map(move |k| s * x[k] + tau * y[k])
        })
        .collect();
    let p = VectorFieldGrid {
        domain: d.clone(),
        values,
        mask: u.mask,
    };
    let eye = DMatrix::<f64>::identity(n, n);
    let dp: Vec<DMatrix<f64>> = hessian_field(u)?
        .values
        .into_iter()
        .map(|h| &eye * s + h * tau)
        .collect();
    let min_sym_eigenvalue = dp
        .iter()
        .map(|m| ((m + m.transpose()) * 0.5).symmetric_eigenvalues().min())
        .fold(f64::INFINITY, f64::min);
    Ok(ProjectionRecord {
        p,
        dp,
        min_sym_eigenvalue,
        uniformly_positive: min_sym_eigenvalue > 0.0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum InjectivityVerdict {
    Injective {
        certificate: InjectivityCertificate,
    },
    Collision {
        x1: Vec<f64>,
        x2: Vec<f64>,
        distance: f64,
        tolerance: f64,
        source_separation: f64,
    },
}

impl InjectivityVerdict {
    pub fn is_injective(&self) -> bool {
        matches!(self, InjectivityVerdict::Injective { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InjectivityCertificate {
    /// `sym(Dp) > 0` on a convex domain: `<p(x) - p(y), x - y> > 0` for `x != y`.
    MonotoneMap { min_sym_eigenvalue: f64 },
    /// Exhaustive search found no node image near a distant image.
    NoCollisionFound { nodes: usize, tolerance: f64 },
}

type CellKey = Vec<i64>;

fn cell_key(x: &[f64], size: f64) -> CellKey {
    x.iter().map(|v| (v / size).floor() as i64).collect()
}

fn neighbour_keys(key: &CellKey) -> Vec<CellKey> {
    let n = key.len();
    (0..3usize.pow(n as u32))
        .map(|mut code| {
            key.iter()
                .map(|k| {
                    let off = (code % 3) as i64 - 1;
                    code /= 3;
                    k + off
                })
                .collect()
        })
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Searches for two source points farther than `2h` apart whose images coincide.
///
/// Node images within `h/4` of each other are reported first. In two dimensions the
/// search also tests every node image against the image triangles of distant cells,
/// which catches folds whose images never bring two nodes that close.
pub fn injectivity_check(p: &VectorFieldGrid) -> InjectivityVerdict {
    let d = &p.domain;
    let n = d.dim();
    let h = d.h();
    let tolerance = h / 4.0;
    let separation = 2.0 * h;

    if p.mask.is_none() {
        let min_sym = jacobian_field(p)
            .iter()
            .map(|j| ((j + j.transpose()) * 0.5).symmetric_eigenvalues().min())
            .fold(f64::INFINITY, f64::min);
        if min_sym > 0.0 {
            return InjectivityVerdict::Injective {
                certificate: InjectivityCertificate::MonotoneMap {
                    min_sym_eigenvalue: min_sym,
                },
            };
        }
    }

    let active: Vec<usize> = (0..d.len())
        .filter(|&i| p.mask.is_none_or(|m| m.contains(&d.node_coord(i))))
        .collect();

    let mut hash: HashMap<CellKey, Vec<usize>> = HashMap::new();
    for &i in &active {
        hash.entry(cell_key(p.node(i), tolerance))
            .or_default()
            .push(i);
    }
    let pair = active.par_iter().find_map_first(|&i| {
        let pi = p.node(i);
        let xi = d.node_coord(i);
        for key in neighbour_keys(&cell_key(pi, tolerance)) {
            for &j in hash.get(&key).into_iter().flatten() {
                if j <= i {
                    continue;
                }
                let gap = dist(pi, p.node(j));
                let xj = d.node_coord(j);
                let sep = dist(&xi, &xj);
                if gap < tolerance && sep > separation {
                    return Some(InjectivityVerdict::Collision {
                        x1: xi,
                        x2: xj,
                        distance: gap,
                        tolerance,
                        source_separation: sep,
                    });
                }
            }
        }
        None
    });
    if let Some(hit) = pair {
        return hit;
    }

    if n == 2 {
        if let Some(hit) = triangle_search(p, &active, separation) {
            return hit;
        }
    }

    InjectivityVerdict::Injective {
        certificate: InjectivityCertificate::NoCollisionFound {
            nodes: active.len(),
            tolerance,
        },
    }
}

fn barycentric(p: &[f64], a: &[f64], b: &[f64], c: &[f64]) -> Option<[f64; 3]> {
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    if det.abs() < 1e-300 {
        return None;
    }
    let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
    let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
    Some([1.0 - l1 - l2, l1, l2])
}

fn triangle_search(
    p: &VectorFieldGrid,
    active: &[usize],
    separation: f64,
) -> Option<InjectivityVerdict> {
    let d = &p.domain;
    let (r0, r1) = (d.resolution[0], d.resolution[1]);
    let mut triangles: Vec<[usize; 3]> = Vec::with_capacity(2 * (r0 - 1) * (r1 - 1));
    for i in 0..r0 - 1 {
        for j in 0..r1 - 1 {
            let a = d.index(&[i, j]);
            let b = d.index(&[i + 1, j]);
            let c = d.index(&[i + 1, j + 1]);
            let e = d.index(&[i, j + 1]);
            triangles.push([a, b, c]);
            triangles.push([a, c, e]);
        }
    }
    if let Some(mask) = p.mask {
        triangles.retain(|tri| tri.iter().all(|&v| mask.contains(&d.node_coord(v))));
    }

    // bucket size from the typical image edge length
    let mut edges: Vec<f64> = triangles
        .iter()
        .map(|t| dist(p.node(t[0]), p.node(t[1])).max(dist(p.node(t[1]), p.node(t[2]))))
        .collect();
    edges.sort_by(f64::total_cmp);
    let size = edges
        .get(edges.len() / 2)
        .copied()
        .unwrap_or(1.0)
        .max(1e-12);

    let mut hash: HashMap<CellKey, Vec<usize>> = HashMap::new();
    for (k, tri) in triangles.iter().enumerate() {
        let pts: Vec<&[f64]> = tri.iter().map(|&v| p.node(v)).collect();
        let lo: Vec<f64> = (0..2)
            .map(|a| pts.iter().map(|q| q[a]).fold(f64::INFINITY, f64::min))
            .collect();
        let hi: Vec<f64> = (0..2)
            .map(|a| pts.iter().map(|q| q[a]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let (klo, khi) = (cell_key(&lo, size), cell_key(&hi, size));
        // skip pathological slivers spanning a huge number of buckets
        if (khi[0] - klo[0] + 1) * (khi[1] - klo[1] + 1) > 4096 {
            continue;
        }
        for a in klo[0]..=khi[0] {
            for b in klo[1]..=khi[1] {
                hash.entry(vec![a, b]).or_default().push(k);
            }
        }
    }

    active.par_iter().find_map_first(|&i| {
        let pi = p.node(i);
        let xi = d.node_coord(i);
        for &k in hash.get(&cell_key(pi, size)).into_iter().flatten() {
            let tri = triangles[k];
            let xs: Vec<Vec<f64>> = tri.iter().map(|&v| d.node_coord(v)).collect();
            if xs.iter().any(|x| dist(x, &xi) <= separation) {
                continue;
            }
            let Some(l) = barycentric(pi, p.node(tri[0]), p.node(tri[1]), p.node(tri[2])) else {
                continue;
            };
            if l.iter().all(|w| *w >= -1e-12) {
                let x2: Vec<f64> = (0..2)
                    .map(|a| l[0] * xs[0][a] + l[1] * xs[1][a] + l[2] * xs[2][a])
                    .collect();
                let image: Vec<f64> = (0..2)
                    .map(|a| {
                        l[0] * p.node(tri[0])[a]
                            + l[1] * p.node(tri[1])[a]
                            + l[2] * p.node(tri[2])[a]
                    })
                    .collect();
                return Some(InjectivityVerdict::Collision {
                    source_separation: dist(&xi, &x2),
                    x1: xi,
                    x2,
                    distance: dist(pi, &image),
                    tolerance: d.h() / 4.0,
                });
            }
        }
        None
    })
}

/// Tensor-product cubic Lagrange interpolation of a node-major field.
struct CubicInterpolant<'a> {
    domain: &'a GridDomain,
    values: &'a [f64],
    width: usize,
}

fn lagrange4(s: f64) -> ([f64; 4], [f64; 4]) {
    // nodes at -1, 0, 1, 2 in units of h
    let w = [
        -s * (s - 1.0) * (s - 2.0) / 6.0,
        (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0,
        -(s + 1.0) * s * (s - 2.0) / 2.0,
        (s + 1.0) * s * (s - 1.0) / 6.0,
    ];
    let dw = [
        -(3.0 * s * s - 6.0 * s + 2.0) / 6.0,
        (3.0 * s * s - 4.0 * s - 1.0) / 2.0,
        -(3.0 * s * s - 2.0 * s - 2.0) / 2.0,
        (3.0 * s * s - 1.0) / 6.0,
    ];
    (w, dw)
}

impl CubicInterpolant<'_> {
    /// Values and Jacobian (`width x n`) at `x`, which must lie in the domain box.
    fn eval(&self, x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let d = self.domain;
        let n = d.dim();
        let h = d.spacing();
        let mut base = vec![0usize; n];
        let mut w = vec![[0.0; 4]; n];
        let mut dw = vec![[0.0; 4]; n];
        for k in 0..n {
            let r = d.resolution[k];
            let pos = (x[k] - d.bounds[k][0]) / h[k];
            let cell = (pos.floor() as isize).clamp(0, r as isize - 2) as usize;
            let b = cell.saturating_sub(1).min(r - 4);
            base[k] = b;
            let (a, da) = lagrange4(pos - (b + 1) as f64);
            w[k] = a;
            dw[k] = da.map(|v| v / h[k]);
        }
        let mut val = vec![0.0; self.width];
        let mut jac = DMatrix::zeros(self.width, n);
        let strides = d.strides();
        for code in 0..4usize.pow(n as u32) {
            let mut c = code;
            let mut flat = 0;
            let mut weight = 1.0;
            let mut offs = [0usize; 3];
            for k in (0..n).rev() {
                offs[k] = c % 4;
                c /= 4;
            }
            for k in 0..n {
                flat += (base[k] + offs[k]) * strides[k];
                weight *= w[k][offs[k]];
            }
            let dweights: Vec<f64> = (0..n)
                .map(|a| {
                    (0..n)
                        .map(|k| {
                            if k == a {
                                dw[k][offs[k]]
                            } else {
                                w[k][offs[k]]
                            }
                        })
                        .product()
                })
                .collect();
            let node = &self.values[flat * self.width..(flat + 1) * self.width];
            for (comp, v) in node.iter().enumerate() {
                val[comp] += weight * v;
                for a in 0..n {
                    jac[(comp, a)] += dweights[a] * v;
                }
            }
        }
        (val, jac)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HatPotential {
    /// `u_hat` on a box inscribed in `p(Omega)`, zero at the node nearest `p(center)`.
    pub u_hat: ScalarFieldGrid,
    /// Max difference between the two axis orders of path integration.
    pub path_residual: f64,
    /// Max `|d r_j / d x_k - d r_k / d x_j|` on interior target nodes.
    pub antisymmetry: f64,
    /// Trapezoid integral of `r . dx` around the target box boundary.
    pub loop_residual: f64,
    /// Source points `p^{-1}(x_hat)` per target node, node-major.
    pub preimages: Vec<f64>,
}

fn newton_invert(
    interp: &CubicInterpolant<'_>,
    target: &[f64],
    start: &[f64],
    domain: &GridDomain,
) -> Option<Vec<f64>> {
    let n = target.len();
    let scale = 1.0 + target.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut x = start.to_vec();
    for _ in 0..60 {
        let (val, jac) = interp.eval(&x);
        let res = DVector::from_iterator(n, val.iter().zip(target).map(|(a, b)| a - b));
        if res.amax() <= 1e-13 * scale {
            let inside = (0..n).all(|k| {
                x[k] >= domain.bounds[k][0] - 1e-12 && x[k] <= domain.bounds[k][1] + 1e-12
            });
            return inside.then_some(x);
        }
        let step = jac.lu().solve(&res)?;
        let mut lambda = 1.0;
        let norm0 = res.norm();
        loop {
            let trial: Vec<f64> = (0..n)
                .map(|k| (x[k] - lambda * step[k]).clamp(domain.bounds[k][0], domain.bounds[k][1]))
                .collect();
            let (v, _) = interp.eval(&trial);
            let r: f64 = v
                .iter()
                .zip(target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if r < norm0 || lambda < 1e-6 {
                x = trial;
                break;
            }
            lambda *= 0.5;
        }
    }
    None
}

/// Integrates `r` along axis paths from `anchor`, visiting axes in `order`.
fn integrate_paths(domain: &GridDomain, r: &[f64], anchor: &[usize], order: &[usize]) -> Vec<f64> {
    let n = domain.dim();
    let h = domain.spacing();
    let strides = domain.strides();
    let mut u = vec![f64::NAN; domain.len()];
    u[domain.index(anchor)] = 0.0;
    for (stage, &axis) in order.iter().enumerate() {
        let fixed: Vec<usize> = order[stage + 1..].to_vec();
        let starts: Vec<usize> = (0..domain.len())
            .filter(|&i| {
                let m = domain.multi_index(i);
                m[axis] == anchor[axis] && fixed.iter().all(|&k| m[k] == anchor[k])
            })
            .collect();
        for s0 in starts {
            let a = anchor[axis];
            let step = strides[axis];
            for dir in [1isize, -1] {
                let mut idx = a as isize;
                loop {
                    let next = idx + dir;
                    if next < 0 || next >= domain.resolution[axis] as isize {
                        break;
                    }
                    let from = (s0 as isize + (idx - a as isize) * step as isize) as usize;
                    let to = (s0 as isize + (next - a as isize) * step as isize) as usize;
                    let avg = 0.5 * (r[from * n + axis] + r[to * n + axis]);
                    u[to] = u[from] + dir as f64 * h[axis] * avg;
                    idx = next;
                }
            }
        }
    }
    u
}

fn loop_integral_2d(domain: &GridDomain, r: &[f64]) -> f64 {
    let (r0, r1) = (domain.resolution[0], domain.resolution[1]);
    let mut path: Vec<[usize; 2]> = Vec::new();
    path.extend((0..r0).map(|i| [i, 0]));
    path.extend((1..r1).map(|j| [r0 - 1, j]));
    path.extend((0..r0 - 1).rev().map(|i| [i, r1 - 1]));
    path.extend((0..r1 - 1).rev().map(|j| [0, j]));
    path.windows(2)
        .map(|w| {
            let (a, b) = (domain.index(&w[0]), domain.index(&w[1]));
            let (xa, xb) = (domain.coord(&w[0]), domain.coord(&w[1]));
            (0..2)
                .map(|k| 0.5 * (r[a * 2 + k] + r[b * 2 + k]) * (xb[k] - xa[k]))
                .sum::<f64>()
        })
        .sum()
}

/// Rebuilds `u_hat` with `grad u_hat = q o p^{-1}` on a box inside `p(Omega)`.
pub fn reconstruct_hat_potential(u: &ScalarFieldGrid, t: f64) -> Result<HatPotential, LewyError> {
    if u.mask.is_some() {
        return Err(LewyError::MaskedDomain);
    }
    let constants = MetricConstants::new(t)?;
    if constants.regime == Regime::Degenerate {
        return Err(LewyError::DegenerateAngle);
    }
    let proj = projection_p(u, t)?;
    if !proj.uniformly_positive {
        return Err(LewyError::NotMonotone {
            min_eigenvalue: proj.min_sym_eigenvalue,
        });
    }
    let d = &u.domain;
    let n = d.dim();
    if d.resolution.iter().any(|&r| r < 6) {
        return Err(LewyError::InversionFailed);
    }
    let (s, tau) = (constants.sigma, constants.tau);
    // only nodes with central gradients: one-sided edge stencils carry a different
    // error constant, which shows up as a kink after two derivatives
    let h = d.spacing();
    let inner = GridDomain::new(
        (0..n)
            .map(|k| [d.bounds[k][0] + h[k], d.bounds[k][1] - h[k]])
            .collect(),
        d.resolution.iter().map(|r| r - 2).collect(),
    )?;
    let grad = gradient_field(u);
    let mut p_values = Vec::with_capacity(inner.len() * n);
    let mut q_values = Vec::with_capacity(inner.len() * n);
    for node in interior_indices(d, 1) {
        let x = d.coord(&node);
        let y = grad.node(d.index(&node));
        p_values.extend((0..n).map(|k| s * x[k] + tau * y[k]));
        q_values.extend((0..n).map(|k| tau * x[k] + s * y[k]));
    }
    let p_inner = VectorFieldGrid::new(inner.clone(), p_values)?;
    let p_interp = CubicInterpolant {
        domain: &inner,
        values: &p_inner.values,
        width: n,
    };
    let q_interp = CubicInterpolant {
        domain: &inner,
        values: &q_values,
        width: n,
    };

    // inscribed box: each face of the source box maps to one side of the target box
    let mut lo = vec![f64::NEG_INFINITY; n];
    let mut hi = vec![f64::INFINITY; n];
    for i in 0..inner.len() {
        let m = inner.multi_index(i);
        let pi = p_inner.node(i);
        for k in 0..n {
            if m[k] == 0 {
                lo[k] = lo[k].max(pi[k]);
            }
            if m[k] + 1 == inner.resolution[k] {
                hi[k] = hi[k].min(pi[k]);
            }
        }
    }
    if (0..n).any(|k| !(hi[k] > lo[k])) {
        return Err(LewyError::InversionFailed);
    }
    let center = p_interp.eval(&inner.center()).0;

    let mut shrink = 1.0;
    for _ in 0..40 {
        let bounds: Vec<[f64; 2]> = (0..n)
            .map(|k| {
                let c = 0.5 * (lo[k] + hi[k]);
                let half = 0.5 * (hi[k] - lo[k]) * shrink;
                [c - half, c + half]
            })
            .collect();
        let target = GridDomain::new(bounds, d.resolution.clone())?;
        let points: Vec<Vec<f64>> = (0..target.len()).map(|i| target.node_coord(i)).collect();

        // continuation along the last axis; each line starts from the nearest source node
        let line_len = *target.resolution.last().unwrap();
        let lines: Vec<Option<Vec<Vec<f64>>>> = points
            .par_chunks(line_len)
            .map(|line| {
                let mut out = Vec::with_capacity(line.len());
                let mut guess = nearest_preimage(&p_inner, &line[0]);
                for y in line {
                    let x = newton_invert(&p_interp, y, &guess, &inner)?;
                    guess = x.clone();
                    out.push(x);
                }
                Some(out)
            })
            .collect();
        let Some(pre): Option<Vec<Vec<f64>>> = lines
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .map(|v| v.into_iter().flatten().collect())
        else {
            shrink *= 0.95;
            continue;
        };

        let r: Vec<f64> = pre.iter().flat_map(|x| q_interp.eval(x).0).collect();
        let anchor = target.multi_index(
            (0..target.len())
                .min_by(|&a, &b| dist(&points[a], &center).total_cmp(&dist(&points[b], &center)))
                .unwrap(),
        );
        let forward: Vec<usize> = (0..n).collect();
        let backward: Vec<usize> = (0..n).rev().collect();
        let u_a = integrate_paths(&target, &r, &anchor, &forward);
        let u_b = integrate_paths(&target, &r, &anchor, &backward);
        let path_residual = u_a
            .iter()
            .zip(&u_b)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);

        let field = VectorFieldGrid {
            domain: target.clone(),
            values: r.clone(),
            mask: None,
        };
        let antisymmetry = interior_indices(&target, 1)
            .iter()
            .map(|m| {
                let j = jacobian_at(&field, target.index(m));
                (&j - j.transpose()).amax()
            })
            .fold(0.0, f64::max);
        let loop_residual = if n == 2 {
            loop_integral_2d(&target, &r)
        } else {
            0.0
        };

        return Ok(HatPotential {
            u_hat: ScalarFieldGrid::new(target, u_a)?,
            path_residual,
            antisymmetry,
            loop_residual,
            preimages: pre.into_iter().flatten().collect(),
        });
    }
    Err(LewyError::InversionFailed)
}

fn nearest_preimage(p: &VectorFieldGrid, y: &[f64]) -> Vec<f64> {
    let best = (0..p.domain.len())
        .min_by(|&a, &b| dist(p.node(a), y).total_cmp(&dist(p.node(b), y)))
        .unwrap();
    p.domain.node_coord(best)
}

/// Source point and gradient `(x, grad u(x))` of the graph whose rotation is the
/// gradient graph of `u_hat` at `x_hat`.
pub fn inverse_transform_point(
    x_hat: &[f64],
    grad_u_hat: &[f64],
    constants: &MetricConstants,
) -> Result<(Vec<f64>, Vec<f64>), LewyError> {
    let (s, t) = (constants.sigma, constants.tau);
    let det = s * s - t * t;
    if det.abs() < 1e-14 {
        return Err(LewyError::DegenerateAngle);
    }
    let x = x_hat
        .iter()
        .zip(grad_u_hat)
        .map(|(a, b)| (s * a - t * b) / det)
        .collect();
    let y = x_hat
        .iter()
        .zip(grad_u_hat)
        .map(|(a, b)| (-t * a + s * b) / det)
        .collect();
    Ok((x, y))
}

/// The potential `u` at the source point paired with `x_hat` (see [`inverse_transform_point`]),
/// given `u_hat(x_hat)` and `grad u_hat(x_hat)`.
pub fn inverse_transform_potential(
    x_hat: &[f64],
    u_hat: f64,
    grad_u_hat: &[f64],
    constants: &MetricConstants,
) -> Result<f64, LewyError> {
    let (s, t) = (constants.sigma, constants.tau);
    let det = s * s - t * t;
    if det.abs() < 1e-14 {
        return Err(LewyError::DegenerateAngle);
    }
    let (alpha, beta) = (s / det, t / det);
    let xx: f64 = x_hat.iter().map(|v| v * v).sum();
    let gg: f64 = grad_u_hat.iter().map(|v| v * v).sum();
    let xg: f64 = x_hat.iter().zip(grad_u_hat).map(|(a, b)| a * b).sum();
    Ok(-alpha * beta * 0.5 * (xx + gg) + beta * beta * xg + (alpha * alpha - beta * beta) * u_hat)
}

/// Exact smooth solution of the two-dimensional log-ratio equation built by rotating
/// the radial Monge-Ampere potential `u_hat' = sqrt(K r^2 + C)` back through `phi_t`.
///
/// The resulting `u` solves `F^t(D^2 u) = ln K - 2 ln(sigma / tau)` wherever the
/// radial map `r -> alpha r - beta u_hat'(r)` covers `|x|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialTransportSolution {
    pub constants: MetricConstants,
    pub k: f64,
    pub c: f64,
}

impl RadialTransportSolution {
    pub fn new(t: f64, k: f64, c: f64) -> Result<Self, LewyError> {
        let constants = MetricConstants::new(t)?;
        if constants.regime != Regime::Pseudo || constants.tau <= 0.0 {
            return Err(LewyError::DegenerateAngle);
        }
        if !(k > 0.0 && c > 0.0) {
            return Err(LewyError::InversionFailed);
        }
        Ok(Self { constants, k, c })
    }

    /// Right-hand side of the family equation satisfied by [`value`](Self::value).
    pub fn rhs(&self) -> f64 {
        self.k.ln() - 2.0 * self.constants.sigma_over_tau().ln()
    }

    fn coefficients(&self) -> (f64, f64) {
        let (s, t) = (self.constants.sigma, self.constants.tau);
        let det = s * s - t * t;
        (s / det, t / det)
    }

    fn slope(&self, r: f64) -> f64 {
        (self.k * r * r + self.c).sqrt()
    }

    fn hat_value(&self, r: f64) -> f64 {
        let sk = self.k.sqrt();
        0.5 * r * self.slope(r) + self.c / (2.0 * sk) * (r * sk / self.c.sqrt()).asinh()
    }

    /// Radius `r` of the target point paired with a source point at distance `rho`.
    fn target_radius(&self, rho: f64) -> Option<f64> {
        let (alpha, beta) = self.coefficients();
        let map = |r: f64| alpha * r - beta * self.slope(r);
        let (mut lo, mut hi) = (0.0, 1.0);
        if map(lo) > rho {
            return None;
        }
        while map(hi) < rho {
            hi *= 2.0;
            if hi > 1e12 {
                return None;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if map(mid) < rho {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }

    /// `u(x)`, or `None` when `x` is not covered by the rotated graph.
    pub fn value(&self, x: &[f64]) -> Option<f64> {
        let rho = (x[0] * x[0] + x[1] * x[1]).sqrt();
        let r = self.target_radius(rho)?;
        if rho == 0.0 || r == 0.0 {
            return None;
        }
        let x_hat = [x[0] * r / rho, x[1] * r / rho];
        let g = self.slope(r) / r;
        let grad = [g * x_hat[0], g * x_hat[1]];
        inverse_transform_potential(&x_hat, self.hat_value(r), &grad, &self.constants).ok()
    }

    /// Hessian eigenvalues of `u_hat` at radius `r`: `(K r / u_hat', u_hat' / r)`.
    pub fn hat_eigenvalues(&self, r: f64) -> [f64; 2] {
        let s = self.slope(r);
        [self.k * r / s, s / r]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegenerateVolumes {
    /// `graph_volume(F, g_{pi/4}) / kappa^{n/2}`.
    pub direct: f64,
    /// `integral over the boundary of P*omega`, `omega = x_n dx_1 ^ ... ^ dx_{n-1}`.
    pub boundary: f64,
    /// Measured ratio between `g_{pi/4}` and `P* delta_0`.
    pub kappa: f64,
}

/// Ratio `g_{pi/4}(xi, xi) / |P xi|^2`, `P(x, y) = (x + y)/2`, measured on a fixed plane.
pub fn degenerate_conformal_factor(n: usize) -> f64 {
    let q = DMatrix::from_fn(n, n, |i, j| {
        0.3 + 0.1 * i as f64 - 0.2 * j as f64 + if i == j { 1.0 } else { 0.0 }
    });
    let g = graph_gram(&q, MetricSpec::Family(std::f64::consts::FRAC_PI_4));
    let pushed = (DMatrix::identity(n, n) + &q) * 0.5;
    let e = &pushed * pushed.transpose();
    g.dot(&e) / e.norm_squared()
}

fn p_image(f: &VectorFieldGrid, i: usize) -> Vec<f64> {
    let x = f.domain.node_coord(i);
    x.iter()
        .zip(f.node(i))
        .map(|(a, b)| 0.5 * (a + b))
        .collect()
}

/// Direct and Stokes volumes of `P(Gamma)` for the graph of `F` at `t = pi/4`.
pub fn degenerate_projection_volume(f: &VectorFieldGrid) -> Result<DegenerateVolumes, LewyError> {
    let d = &f.domain;
    let n = d.dim();
    if f.mask.is_some() {
        return Err(LewyError::MaskedDomain);
    }
    for i in 0..d.len() {
        let m = DMatrix::identity(n, n) + jacobian_at(f, i);
        let sigma_min = m.singular_values().min();
        if sigma_min < 1e-8 {
            return Err(LewyError::NearSingular {
                location: d.node_coord(i),
                sigma_min,
            });
        }
    }
    let kappa = degenerate_conformal_factor(n);
    let direct = graph_volume(f, MetricSpec::Family(std::f64::consts::FRAC_PI_4))?
        / kappa.powf(n as f64 / 2.0);
    let boundary = match n {
        2 => boundary_volume_2d(f),
        _ => boundary_volume_3d(f),
    };
    Ok(DegenerateVolumes {
        direct,
        boundary,
        kappa,
    })
}

fn boundary_volume_2d(f: &VectorFieldGrid) -> f64 {
    let d = &f.domain;
    let (r0, r1) = (d.resolution[0], d.resolution[1]);
    let mut path: Vec<[usize; 2]> = Vec::new();
    path.extend((0..r0).map(|i| [i, 0]));
    path.extend((1..r1).map(|j| [r0 - 1, j]));
    path.extend((0..r0 - 1).rev().map(|i| [i, r1 - 1]));
    path.extend((0..r1 - 1).rev().map(|j| [0, j]));
    let integral: f64 = path
        .windows(2)
        .map(|w| {
            let a = p_image(f, d.index(&w[0]));
            let b = p_image(f, d.index(&w[1]));
            0.5 * (a[1] + b[1]) * (b[0] - a[0])
        })
        .sum();
    -integral
}

fn boundary_volume_3d(f: &VectorFieldGrid) -> f64 {
    let d = &f.domain;
    let h = d.spacing();
    let mut total = 0.0;
    for k in 0..3 {
        let others: Vec<usize> = (0..3).filter(|&a| a != k).collect();
        let (i, j) = (others[0], others[1]);
        let (ri, rj) = (d.resolution[i], d.resolution[j]);
        for (side, orient) in [(0usize, -1.0), (d.resolution[k] - 1, 1.0)] {
            let sign = orient * if k % 2 == 0 { 1.0 } else { -1.0 };
            let mut face = 0.0;
            for a in 0..ri {
                for b in 0..rj {
                    let mut m = [0usize; 3];
                    m[k] = side;
                    m[i] = a;
                    m[j] = b;
                    let img = |mm: [usize; 3]| p_image(f, d.index(&mm));
                    let tangential = |axis: usize, idx: usize, len: usize| -> Vec<f64> {
                        let at = |v: usize| {
                            let mut mm = m;
                            mm[axis] = v;
                            img(mm)
                        };
                        let hh = h[axis];
                        if idx == 0 {
                            let (p0, p1, p2) = (at(0), at(1), at(2));
                            (0..3)
                                .map(|c| (-3.0 * p0[c] + 4.0 * p1[c] - p2[c]) / (2.0 * hh))
                                .collect()
                        } else if idx + 1 == len {
                            let (p0, p1, p2) = (at(idx), at(idx - 1), at(idx - 2));
                            (0..3)
                                .map(|c| (3.0 * p0[c] - 4.0 * p1[c] + p2[c]) / (2.0 * hh))
                                .collect()
                        } else {
                            let (pp, pm) = (at(idx + 1), at(idx - 1));
                            (0..3).map(|c| (pp[c] - pm[c]) / (2.0 * hh)).collect()
                        }
                    };
                    let di = tangential(i, a, ri);
                    let dj = tangential(j, b, rj);
                    let x3 = img(m)[2];
                    let wa = if a == 0 || a + 1 == ri { 0.5 } else { 1.0 } * h[i];
                    let wb = if b == 0 || b + 1 == rj { 0.5 } else { 1.0 } * h[j];
                    face += wa * wb * x3 * (di[0] * dj[1] - dj[0] * di[1]);
                }
            }
            total += sign * face;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_3, FRAC_PI_4, FRAC_PI_6};

    fn unit(res: usize) -> GridDomain {
        GridDomain::cube(2, 0.0, 1.0, res).unwrap()
    }

    fn quadratic(c: f64) -> impl Fn(&[f64]) -> f64 {
        move |x| 0.5 * c * x.iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn pullback_is_conformal_with_unit_factor() {
        let u =
            ScalarFieldGrid::from_fn(unit(9), |x| x[0].powi(3) + x[0] * x[1] + 0.3 * x[1] * x[1])
                .unwrap();
        for t in [0.2, FRAC_PI_6, 1.0, FRAC_PI_3] {
            let g = apply_phi_t(&u, t).unwrap();
            assert_relative_eq!(g.kappa, 1.0, epsilon = 1e-12);
            assert_eq!(g.len(), 49);
        }
        assert!(matches!(
            apply_phi_t(&u, FRAC_PI_4),
            Err(LewyError::DegenerateAngle)
        ));
    }

    #[test]
    fn small_angle_is_nearly_identity() {
        let u = ScalarFieldGrid::from_fn(unit(7), quadratic(1.5)).unwrap();
        let g = apply_phi_t(&u, 1e-9).unwrap();
        for (k, row) in g.images.chunks(4).enumerate() {
            let m = &interior_indices(&u.domain, 1)[k];
            let x = u.domain.coord(m);
            assert!((row[0] - x[0]).abs() < 1e-8 && (row[2] - 1.5 * x[0]).abs() < 1e-8);
        }
    }

    #[test]
    fn quadratic_images_stay_linear_graphs() {
        let t = 0.5;
        let m = MetricConstants::new(t).unwrap();
        let c = 1.7;
        let u = ScalarFieldGrid::from_fn(unit(9), quadratic(c)).unwrap();
        let g = apply_phi_t(&u, t).unwrap();
        let want = (m.tau + m.sigma * c) / (m.sigma + m.tau * c);
        for (row, q) in g.images.chunks(4).zip(&g.tangents) {
            assert_relative_eq!(row[2], want * row[0], max_relative = 1e-12);
            let q = q.as_ref().unwrap();
            assert!((q - DMatrix::identity(2, 2) * want).amax() < 1e-12);
        }
    }

    #[test]
    fn csv_and_sidecar() {
        let u = ScalarFieldGrid::from_fn(unit(5), quadratic(1.0)).unwrap();
        let g = apply_phi_t(&u, 0.3).unwrap();
        let csv = g.to_csv();
        assert!(csv.starts_with("x_1,x_2,y_1,y_2\n"));
        assert_eq!(csv.lines().count(), 1 + 9);
        assert_eq!(g.sidecar()["t"], 0.3);
    }

    #[test]
    fn projection_of_quadratic() {
        let m = MetricConstants::new(0.4).unwrap();
        let u = ScalarFieldGrid::from_fn(unit(9), quadratic(1.0)).unwrap();
        let r = projection_p(&u, 0.4).unwrap();
        assert_relative_eq!(r.min_sym_eigenvalue, m.sigma + m.tau, epsilon = 1e-10);
        assert!(r.uniformly_positive);
        assert!(injectivity_check(&r.p).is_injective());
    }

    #[test]
    fn projection_lower_bound_when_hessian_above_minus_a() {
        let t = 0.5;
        let m = MetricConstants::new(t).unwrap();
        // D^2 u = diag(-a + 0.2, 3)
        let u = ScalarFieldGrid::from_fn(unit(9), |x| {
            0.5 * (-m.a + 0.2) * x[0] * x[0] + 1.5 * x[1] * x[1]
        })
        .unwrap();
        let r = projection_p(&u, t).unwrap();
        assert!(r.min_sym_eigenvalue >= m.sigma - m.tau * m.a - 1e-10);
        assert!(m.sigma - m.tau * m.a > 0.0);
    }

    #[test]
    fn folded_map_has_a_collision() {
        // x -> (x1, |x2|) style fold, smoothed: p = (x1, x2^2) on [-1, 1]^2
        let d = GridDomain::cube(2, -1.0, 1.0, 41).unwrap();
        let p = VectorFieldGrid::from_fn(d, |x| vec![x[0], x[1] * x[1]]).unwrap();
        match injectivity_check(&p) {
            InjectivityVerdict::Collision {
                x1,
                x2,
                distance,
                tolerance,
                source_separation,
            } => {
                assert!(distance < tolerance);
                assert!(source_separation > 2.0 * 0.05);
                assert!((x1[0] - x2[0]).abs() < 0.05 && (x1[1] + x2[1]).abs() < 0.05);
            }
            v => panic!("expected a collision, got {v:?}"),
        }
    }

    #[test]
    fn rotation_without_monotonicity_is_still_injective() {
        let d = GridDomain::cube(2, -1.0, 1.0, 21).unwrap();
        // a rotation by 120 degrees has indefinite symmetric part only if angle > 90
        let (c, s) = (2.0f64.cos(), 2.0f64.sin());
        let p = VectorFieldGrid::from_fn(d, |x| vec![c * x[0] - s * x[1], s * x[0] + c * x[1]])
            .unwrap();
        match injectivity_check(&p) {
            InjectivityVerdict::Injective {
                certificate: InjectivityCertificate::NoCollisionFound { .. },
            } => {}
            v => panic!("unexpected verdict {v:?}"),
        }
    }

    #[test]
    fn cubic_interpolant_is_exact_on_cubics() {
        let d = GridDomain::new(vec![[0.0, 1.0], [-1.0, 2.0]], vec![7, 9]).unwrap();
        let f = |x: &[f64]| x[0].powi(3) - 2.0 * x[0] * x[1] * x[1] + x[1].powi(3);
        let vals = d.samples(f);
        let it = CubicInterpolant {
            domain: &d,
            values: &vals,
            width: 1,
        };
        for x in [[0.13, 0.77], [0.99, -0.95], [0.0, 2.0], [0.5, 0.5]] {
            let (v, j) = it.eval(&x);
            assert_relative_eq!(v[0], f(&x), epsilon = 1e-12);
            assert_relative_eq!(
                j[(0, 0)],
                3.0 * x[0] * x[0] - 2.0 * x[1] * x[1],
                epsilon = 1e-11
            );
            assert_relative_eq!(
                j[(0, 1)],
                -4.0 * x[0] * x[1] + 3.0 * x[1] * x[1],
                epsilon = 1e-11
            );
        }
    }

    #[test]
    fn reconstruct_quadratics() {
        for (t, c) in [(0.4, 1.0), (0.4, 2.5), (1.1, 0.6)] {
            let m = MetricConstants::new(t).unwrap();
            let u =
                ScalarFieldGrid::from_fn(GridDomain::cube(2, -1.0, 1.0, 17).unwrap(), quadratic(c))
                    .unwrap();
            let hat = reconstruct_hat_potential(&u, t).unwrap();
            let want = (m.tau + m.sigma * c) / (m.sigma + m.tau * c);
            for h in hessian_field(&hat.u_hat).unwrap().values {
                assert!((h - DMatrix::identity(2, 2) * want).amax() < 1e-9);
            }
            assert!(hat.path_residual < 1e-12);
            assert!(hat.antisymmetry < 1e-10);
            assert!(hat.loop_residual.abs() < 1e-12);
            let centre = hat.u_hat.domain.center();
            let anchor_val = hat
                .u_hat
                .values
                .iter()
                .cloned()
                .fold(f64::INFINITY, |m, v| m.min(v.abs()));
            assert_eq!(anchor_val, 0.0);
            assert!(centre.iter().all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn reconstruct_refuses_non_monotone() {
        let t = 0.3;
        let m = MetricConstants::new(t).unwrap();
        let u = ScalarFieldGrid::from_fn(unit(9), quadratic(-m.a - m.b - 1.0)).unwrap();
        assert!(matches!(
            reconstruct_hat_potential(&u, t),
            Err(LewyError::NotMonotone { .. })
        ));
    }

    #[test]
    fn inverse_point_round_trip() {
        let m = MetricConstants::new(0.3).unwrap();
        let x = [0.4, -1.2];
        let y = [2.0, 0.5];
        let xh: Vec<f64> = (0..2).map(|k| m.sigma * x[k] + m.tau * y[k]).collect();
        let yh: Vec<f64> = (0..2).map(|k| m.tau * x[k] + m.sigma * y[k]).collect();
        let (bx, by) = inverse_transform_point(&xh, &yh, &m).unwrap();
        for k in 0..2 {
            assert_relative_eq!(bx[k], x[k], epsilon = 1e-14);
            assert_relative_eq!(by[k], y[k], epsilon = 1e-14);
        }
    }

    #[test]
    fn inverse_potential_has_the_right_gradient() {
        // u_hat = |x|^2 / 2 + x1^3 / 10; check du = y . dx along a small step
        let m = MetricConstants::new(0.35).unwrap();
        let uh = |x: &[f64]| 0.5 * (x[0] * x[0] + x[1] * x[1]) + x[0].powi(3) / 10.0;
        let guh = |x: &[f64]| vec![x[0] + 0.3 * x[0] * x[0], x[1]];
        let at = |xh: [f64; 2]| {
            let g = guh(&xh);
            let (x, y) = inverse_transform_point(&xh, &g, &m).unwrap();
            (
                x,
                y,
                inverse_transform_potential(&xh, uh(&xh), &g, &m).unwrap(),
            )
        };
        let e = 1e-6;
        let (x0, y0, u0) = at([0.7, 0.2]);
        let (x1, _, u1) = at([0.7 + e, 0.2 - e]);
        let du = u1 - u0;
        let pred: f64 = (0..2).map(|k| y0[k] * (x1[k] - x0[k])).sum();
        assert!((du - pred).abs() < 1e-10, "{du} vs {pred}");
    }

    #[test]
    fn radial_solution_satisfies_the_equation() {
        use crate::equation::{f_t, FamilyPoint};
        let sol = RadialTransportSolution::new(std::f64::consts::FRAC_PI_8, 1.0, 0.3).unwrap();
        let point = FamilyPoint::new(sol.constants.t, 0.0).unwrap();
        let e = 1e-3;
        for x in [[0.6, 0.7], [1.1, 0.45], [0.9, 1.2]] {
            let v = |dx: f64, dy: f64| sol.value(&[x[0] + dx, x[1] + dy]).unwrap();
            let h = DMatrix::from_row_slice(
                2,
                2,
                &[
                    (v(e, 0.0) - 2.0 * v(0.0, 0.0) + v(-e, 0.0)) / (e * e),
                    (v(e, e) - v(e, -e) - v(-e, e) + v(-e, -e)) / (4.0 * e * e),
                    (v(e, e) - v(e, -e) - v(-e, e) + v(-e, -e)) / (4.0 * e * e),
                    (v(0.0, e) - 2.0 * v(0.0, 0.0) + v(0.0, -e)) / (e * e),
                ],
            );
            let l: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
            assert!((f_t(&l, &point).unwrap() - sol.rhs()).abs() < 1e-5);
        }
    }

    #[test]
    fn degenerate_factor() {
        assert_relative_eq!(
            degenerate_conformal_factor(2),
            2.0 * 2f64.sqrt(),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            degenerate_conformal_factor(3),
            2.0 * 2f64.sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn degenerate_volume_of_identity_graph() {
        let f = VectorFieldGrid::from_fn(unit(17), |x| x.to_vec()).unwrap();
        let v = degenerate_projection_volume(&f).unwrap();
        assert_relative_eq!(v.direct, 1.0, epsilon = 1e-12);
        assert_relative_eq!(v.boundary, 1.0, epsilon = 1e-12);

        let d3 = GridDomain::cube(3, 0.0, 1.0, 9).unwrap();
        let f =
            VectorFieldGrid::from_fn(d3, |x| vec![x[0] + 0.1 * x[1], x[1], x[2] * 2.0]).unwrap();
        let v = degenerate_projection_volume(&f).unwrap();
        let want = (DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0])
            * 0.5)
            .determinant();
        assert_relative_eq!(v.direct, want, epsilon = 1e-12);
        assert_relative_eq!(v.boundary, want, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_volume_rejects_minus_one() {
        let f = VectorFieldGrid::from_fn(unit(9), |x| vec![-x[0], x[1]]).unwrap();
        assert!(matches!(
            degenerate_projection_volume(&f),
            Err(LewyError::NearSingular { .. })
        ));
    }
}
