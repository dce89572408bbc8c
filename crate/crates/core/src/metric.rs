//! Oriented n-planes in `R^n x R^n`, the metrics `dxdy`, `g_t`, `delta_0`, and the
//! calibration forms evaluated on them.
//!
//! Coordinates on `R^{2n}` are ordered `(x_1, ..., x_n, y_1, ..., y_n)`. Under the
//! identification `R^{2n} = C^n` the complex coordinate is `z_k = x_k + i y_k`.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4};

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default absolute tolerance for symmetry and space-like tests on unit-scaled matrices.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Angles within this distance of `0`, `pi/4` or `pi/2` snap onto the endpoint.
pub const ANGLE_SNAP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlaneError {
    #[error("angle t = {0} lies outside [0, pi/2]")]
    AngleOutOfRange(f64),
    #[error("plane is not space-like: smallest Gram eigenvalue {min_eigenvalue:e}")]
    NotSpacelike { min_eigenvalue: f64 },
    #[error("plane is not Lagrangian (antisymmetric defect {defect:e})")]
    NotLagrangian { defect: f64 },
    #[error("symmetric part is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    SymmetricPartNotPositive { min_eigenvalue: f64 },
    #[error("calibration constant must be positive, got {0}")]
    NonPositiveConstant(f64),
    #[error("dimension {0} exceeds the combinatorial expansion limit of 6")]
    DimensionTooLarge(usize),
    #[error("invalid plane: {0}")]
    Invalid(String),
}

/// Signature class of `g_t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// `t < pi/4`: index `n`.
    Pseudo,
    /// `t = pi/4`: rank `n`.
    Degenerate,
    /// `t > pi/4`: positive definite.
    Euclidean,
}

/// `(cos t, sin t)` with the endpoints `0`, `pi/4`, `pi/2` exact.
pub fn snapped_trig(t: f64) -> (f64, f64) {
    if t.abs() <= ANGLE_SNAP {
        (1.0, 0.0)
    } else if (t - FRAC_PI_4).abs() <= ANGLE_SNAP {
        (FRAC_1_SQRT_2, FRAC_1_SQRT_2)
    } else if (t - FRAC_PI_2).abs() <= ANGLE_SNAP {
        (0.0, 1.0)
    } else {
        (t.cos(), t.sin())
    }
}

/// Every scalar derived from the family parameter `t`.
///
/// At `t = 0` the constants `a` and `b` diverge and are stored as `+inf`.
/// `c_t` is only populated where `a / b` is finite and `b > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConstants {
    pub t: f64,
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
    pub tau: f64,
    pub c_t: Option<f64>,
    pub regime: Regime,
}

impl MetricConstants {
    pub fn new(t: f64) -> Result<Self, PlaneError> {
        if !t.is_finite() || !(-ANGLE_SNAP..=FRAC_PI_2 + ANGLE_SNAP).contains(&t) {
            return Err(PlaneError::AngleOutOfRange(t));
        }
        let t = if t.abs() <= ANGLE_SNAP {
            0.0
        } else if (t - FRAC_PI_4).abs() <= ANGLE_SNAP {
            FRAC_PI_4
        } else if (t - FRAC_PI_2).abs() <= ANGLE_SNAP {
            FRAC_PI_2
        } else {
            t
        };
        let (cos, sin) = snapped_trig(t);
        let regime = if t == FRAC_PI_4 {
            Regime::Degenerate
        } else if t < FRAC_PI_4 {
            Regime::Pseudo
        } else {
            Regime::Euclidean
        };

        let (a, b) = if t == 0.0 {
            (f64::INFINITY, f64::INFINITY)
        } else if t == FRAC_PI_4 {
            (1.0, 0.0)
        } else if t == FRAC_PI_2 {
            (0.0, 1.0)
        } else {
            let a = cos / sin;
            (a, (a * a - 1.0).abs().sqrt())
        };

        let plus = (cos + sin).sqrt();
        let minus = if regime == Regime::Degenerate {
            0.0
        } else {
            (cos - sin).abs().sqrt()
        };
        let sigma = 0.5 * (plus + minus);
        let tau = 0.5 * (plus - minus);

        let c_t = if a.is_finite() && b > 0.0 && b.is_finite() {
            Some((tau / sigma).atan() - (a / b).atan())
        } else {
            None
        };

        Ok(Self {
            t,
            a,
            b,
            sigma,
            tau,
            c_t,
            regime,
        })
    }

    /// `sigma / tau`; infinite where `tau = 0`.
    pub fn sigma_over_tau(&self) -> f64 {
        if self.tau == 0.0 {
            f64::INFINITY
        } else {
            self.sigma / self.tau
        }
    }

    pub fn trig(&self) -> (f64, f64) {
        snapped_trig(self.t)
    }
}

/// Shorthand for [`MetricConstants::new`].
pub fn metric_constants(t: f64) -> Result<MetricConstants, PlaneError> {
    MetricConstants::new(t)
}

/// A symmetric bilinear form on `R^n x R^n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "t", rename_all = "lowercase")]
pub enum MetricSpec {
    /// `1/2 sum (dx_i dy_i + dy_i dx_i)`, signature `(n, n)`.
    DxDy,
    /// `g_t = cos t * g_0 + sin t * delta_0` with `g_0 = 2 dxdy`.
    Family(f64),
    /// `delta_0`.
    Euclidean,
}

impl MetricSpec {
    /// Evaluates the form on two vectors of length `2n`.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> f64 {
        debug_assert_eq!(u.len(), v.len());
        let n = u.len() / 2;
        let mixed = || -> f64 { (0..n).map(|k| u[k] * v[n + k] + u[n + k] * v[k]).sum() };
        let dot = || -> f64 { u.iter().zip(v).map(|(p, q)| p * q).sum() };
        match *self {
            MetricSpec::DxDy => 0.5 * mixed(),
            MetricSpec::Euclidean => dot(),
            MetricSpec::Family(t) => {
                let (cos, sin) = snapped_trig(t);
                let mut acc = 0.0;
                if cos != 0.0 {
                    acc += cos * mixed();
                }
                if sin != 0.0 {
                    acc += sin * dot();
                }
                acc
            }
        }
    }

    /// The `2n x 2n` Gram matrix of the form in the coordinate basis.
    pub fn matrix(&self, n: usize) -> DMatrix<f64> {
        let mut e_i = vec![0.0; 2 * n];
        let mut e_j = vec![0.0; 2 * n];
        DMatrix::from_fn(2 * n, 2 * n, |i, j| {
            e_i.iter_mut().for_each(|v| *v = 0.0);
            e_j.iter_mut().for_each(|v| *v = 0.0);
            e_i[i] = 1.0;
            e_j[j] = 1.0;
            self.bilinear(&e_i, &e_j)
        })
    }
}

#[derive(Serialize, Deserialize)]
struct PlaneJson {
    n: usize,
    rep: String,
    data: Vec<f64>,
}

/// An oriented n-plane in `R^n x R^n`.
///
/// `Graph(Q)` spans `xi_i = d/dx_i + sum_j Q_ij d/dy_j`. `Basis(B)` stores the
/// spanning vectors as the rows of an `n x 2n` matrix; row order is orientation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlaneJson", into = "PlaneJson")]
pub enum TangentPlane {
    Graph(DMatrix<f64>),
    Basis(DMatrix<f64>),
}

impl TryFrom<PlaneJson> for TangentPlane {
    type Error = PlaneError;

    fn try_from(json: PlaneJson) -> Result<Self, Self::Error> {
        let n = json.n;
        match json.rep.as_str() {
            "graph" => {
                if json.data.len() != n * n {
                    return Err(PlaneError::Invalid(format!(
                        "graph plane needs {} entries, got {}",
                        n * n,
                        json.data.len()
                    )));
                }
                TangentPlane::graph(DMatrix::from_row_slice(n, n, &json.data))
            }
            "basis" => {
                if json.data.len() != 2 * n * n {
                    return Err(PlaneError::Invalid(format!(
                        "basis plane needs {} entries, got {}",
                        2 * n * n,
                        json.data.len()
                    )));
                }
                TangentPlane::from_basis(DMatrix::from_row_slice(n, 2 * n, &json.data))
            }
            other => Err(PlaneError::Invalid(format!(
                "unknown representation {other:?}"
            ))),
        }
    }
}

impl From<TangentPlane> for PlaneJson {
    fn from(plane: TangentPlane) -> Self {
        let (rep, m) = match plane {
            TangentPlane::Graph(q) => ("graph", q),
            TangentPlane::Basis(b) => ("basis", b),
        };
        let n = m.nrows();
        let data = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)])
            .collect();
        PlaneJson {
            n,
            rep: rep.to_string(),
            data,
        }
    }
}

impl TangentPlane {
    pub fn graph(q: DMatrix<f64>) -> Result<Self, PlaneError> {
        if q.nrows() == 0 || q.nrows() != q.ncols() {
            return Err(PlaneError::Invalid(format!(
                "graph matrix must be square and non-empty, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(PlaneError::Invalid("non-finite graph matrix".into()));
        }
        Ok(TangentPlane::Graph(q))
    }

    pub fn from_basis(b: DMatrix<f64>) -> Result<Self, PlaneError> {
        let n = b.nrows();
        if n == 0 || b.ncols() != 2 * n {
            return Err(PlaneError::Invalid(format!(
                "basis must be n x 2n, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(PlaneError::Invalid("non-finite basis".into()));
        }
        let gram = &b * b.transpose();
        let eig = gram.clone().symmetric_eigenvalues();
        let max = eig.max().max(1.0);
        if eig.min() <= 1e-12 * max {
            return Err(PlaneError::Invalid(
                "basis vectors are linearly dependent".into(),
            ));
        }
        Ok(TangentPlane::Basis(b))
    }

    pub fn dim(&self) -> usize {
        match self {
            TangentPlane::Graph(q) => q.nrows(),
            TangentPlane::Basis(b) => b.nrows(),
        }
    }

    /// Spanning vectors as rows of an `n x 2n` matrix.
    pub fn basis(&self) -> DMatrix<f64> {
        match self {
            TangentPlane::Graph(q) => {
                let n = q.nrows();
                let mut b = DMatrix::zeros(n, 2 * n);
                for i in 0..n {
                    b[(i, i)] = 1.0;
                    for j in 0..n {
                        b[(i, n + j)] = q[(i, j)];
                    }
                }
                b
            }
            TangentPlane::Basis(b) => b.clone(),
        }
    }
}

fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

fn gram_of_rows(b: &DMatrix<f64>, metric: MetricSpec) -> DMatrix<f64> {
    let n = b.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| row(b, i)).collect();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = metric.bilinear(&rows[i], &rows[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// `g(xi_i, xi_j)`, always by direct bilinear evaluation on the spanning vectors.
pub fn induced_gram(plane: &TangentPlane, metric: MetricSpec) -> DMatrix<f64> {
    gram_of_rows(&plane.basis(), metric)
}

pub(crate) fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

fn spd_determinant(g: &DMatrix<f64>) -> f64 {
    match g.clone().cholesky() {
        Some(ch) => ch.l().diagonal().iter().map(|d| d * d).product(),
        None => g.determinant(),
    }
}

/// Volume of the plane's spanning parallelotope: `sqrt(det Gram)`.
pub fn plane_volume(plane: &TangentPlane, metric: MetricSpec) -> Result<f64, PlaneError> {
    plane_volume_tol(plane, metric, DEFAULT_TOL)
}

pub fn plane_volume_tol(
    plane: &TangentPlane,
    metric: MetricSpec,
    tol: f64,
) -> Result<f64, PlaneError> {
    gram_volume(&induced_gram(plane, metric), tol)
}

pub(crate) fn gram_volume(gram: &DMatrix<f64>, tol: f64) -> Result<f64, PlaneError> {
    let min_eigenvalue = min_symmetric_eigenvalue(gram);
    if min_eigenvalue <= tol {
        return Err(PlaneError::NotSpacelike { min_eigenvalue });
    }
    Ok(spd_determinant(gram).max(0.0).sqrt())
}

/// Induced Gram matrix of the graph plane `Q`, written out for speed in field loops.
pub(crate) fn graph_gram(q: &DMatrix<f64>, metric: MetricSpec) -> DMatrix<f64> {
    let sym = (q + q.transpose()) * 0.5;
    match metric {
        MetricSpec::DxDy => sym,
        MetricSpec::Euclidean => DMatrix::identity(q.nrows(), q.nrows()) + q * q.transpose(),
        MetricSpec::Family(t) => {
            let (cos, sin) = snapped_trig(t);
            (DMatrix::identity(q.nrows(), q.nrows()) + q * q.transpose()) * sin + sym * (2.0 * cos)
        }
    }
}

/// Symplectic form `omega(u, v) = sum_k (u_xk v_yk - u_yk v_xk)`.
pub fn symplectic(u: &[f64], v: &[f64]) -> f64 {
    let n = u.len() / 2;
    (0..n).map(|k| u[k] * v[n + k] - u[n + k] * v[k]).sum()
}

pub fn is_lagrangian(plane: &TangentPlane, tol: f64) -> bool {
    lagrangian_defect(plane) <= tol
}

/// Largest antisymmetric defect: `max |Q - Q^T|` or `max |omega(xi_i, xi_j)|`.
pub fn lagrangian_defect(plane: &TangentPlane) -> f64 {
    match plane {
        TangentPlane::Graph(q) => (q - q.transpose()).amax(),
        TangentPlane::Basis(b) => {
            let n = b.nrows();
            let rows: Vec<Vec<f64>> = (0..n).map(|i| row(b, i)).collect();
            let mut worst = 0.0f64;
            for i in 0..n {
                for j in i + 1..n {
                    worst = worst.max(symplectic(&rows[i], &rows[j]).abs());
                }
            }
            worst
        }
    }
}

pub fn is_spacelike(plane: &TangentPlane, metric: MetricSpec, tol: f64) -> bool {
    min_symmetric_eigenvalue(&induced_gram(plane, metric)) > tol
}

fn block_dets(b: &DMatrix<f64>) -> (f64, f64) {
    let n = b.nrows();
    let x = b.columns(0, n).into_owned();
    let y = b.columns(n, n).into_owned();
    (x.determinant(), y.determinant())
}

/// `Phi_c = 1/2 [c dx_1..dx_n + (1/c) dy_1..dy_n]` evaluated on the plane's basis.
///
/// The value is signed: a plane whose orientation disagrees with `Phi_c` gives a
/// non-positive result and is reported as such.
pub fn phi_c(plane: &TangentPlane, c: f64) -> Result<f64, PlaneError> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(PlaneError::NonPositiveConstant(c));
    }
    let (dx, dy) = match plane {
        TangentPlane::Graph(q) => (1.0, q.determinant()),
        TangentPlane::Basis(b) => block_dets(b),
    };
    Ok(0.5 * (c * dx + dy / c))
}

/// Orthonormalizes the rows of `basis` with respect to `metric`, keeping orientation.
///
/// Gram-Schmidt pivots on the largest remaining norm; the last vector is flipped
/// if the pivoting reversed the orientation of the frame.
pub fn orthonormalize(
    basis: &DMatrix<f64>,
    metric: MetricSpec,
    tol: f64,
) -> Result<DMatrix<f64>, PlaneError> {
    let n = basis.nrows();
    let originals: Vec<Vec<f64>> = (0..n).map(|i| row(basis, i)).collect();
    let mut remaining: Vec<Option<Vec<f64>>> = originals.iter().cloned().map(Some).collect();
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(n);

    for _ in 0..n {
        let (pick, norm2) = remaining
            .iter()
            .enumerate()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k, metric.bilinear(v, v))))
            .fold((usize::MAX, f64::NEG_INFINITY), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            });
        if norm2 <= tol {
            return Err(PlaneError::NotSpacelike {
                min_eigenvalue: norm2,
            });
        }
        let v = remaining[pick].take().expect("picked vector present");
        let scale = 1.0 / norm2.sqrt();
        let e: Vec<f64> = v.iter().map(|x| x * scale).collect();
        for other in remaining.iter_mut().flatten() {
            let proj = metric.bilinear(other, &e);
            other.iter_mut().zip(&e).for_each(|(o, ek)| *o -= proj * ek);
        }
        frame.push(e);
    }

    let overlap = DMatrix::from_fn(n, n, |i, j| metric.bilinear(&frame[i], &originals[j]));
    if overlap.determinant() < 0.0 {
        frame[n - 1].iter_mut().for_each(|v| *v = -*v);
    }
    Ok(DMatrix::from_fn(n, 2 * n, |i, j| frame[i][j]))
}

/// `dz_1 ^ ... ^ dz_n` on the Euclidean-orthonormalized basis.
pub fn holomorphic_volume(plane: &TangentPlane) -> Result<Complex<f64>, PlaneError> {
    let n = plane.dim();
    let e = orthonormalize(&plane.basis(), MetricSpec::Euclidean, 1e-14)?;
    let a = DMatrix::from_fn(n, n, |k, i| Complex::new(e[(i, k)], e[(i, n + k)]));
    Ok(a.determinant())
}

/// `alpha_theta = Re(e^{-i theta} dz)` on the normalized plane.
pub fn alpha_theta(plane: &TangentPlane, theta: f64) -> Result<f64, PlaneError> {
    let dz = holomorphic_volume(plane)?;
    Ok((Complex::from_polar(1.0, -theta) * dz).re)
}

/// `beta_theta = Im(e^{-i theta} dz)` on the normalized plane.
pub fn beta_theta(plane: &TangentPlane, theta: f64) -> Result<f64, PlaneError> {
    let dz = holomorphic_volume(plane)?;
    Ok((Complex::from_polar(1.0, -theta) * dz).im)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymDetBound {
    pub det_q: f64,
    pub det_sym: f64,
    pub gap: f64,
}

fn symmetric_part_checked(q: &DMatrix<f64>) -> Result<DMatrix<f64>, PlaneError> {
    if q.nrows() == 0 || q.nrows() != q.ncols() {
        return Err(PlaneError::Invalid("matrix must be square".into()));
    }
    let sym = (q + q.transpose()) * 0.5;
    let min_eigenvalue = min_symmetric_eigenvalue(&sym);
    if !(min_eigenvalue > 0.0) {
        return Err(PlaneError::SymmetricPartNotPositive { min_eigenvalue });
    }
    Ok(sym)
}

/// `det Q` against `det((Q + Q^T)/2)` for `Q` with positive-definite symmetric part.
pub fn sym_det_bound(q: &DMatrix<f64>) -> Result<SymDetBound, PlaneError> {
    let sym = symmetric_part_checked(q)?;
    let det_q = q.determinant();
    let det_sym = spd_determinant(&sym);
    Ok(SymDetBound {
        det_q,
        det_sym,
        gap: det_q - det_sym,
    })
}

/// Groups the terms of `det Q` by how many eigenvalues of the symmetric part they carry.
///
/// Entry `k` of the result is `P_k`. In the eigenbasis of `S = (Q + Q^T)/2`,
/// `Q = diag(lambda) + A` with `A` antisymmetric, and
/// `P_k = sum_{|K| = k} prod_{i in K} lambda_i * det A[K^c]`.
/// Odd principal minors of `A` vanish identically and are set to zero.
pub fn pk_decomposition(q: &DMatrix<f64>) -> Result<Vec<f64>, PlaneError> {
    let n = q.nrows();
    if n > 6 {
        return Err(PlaneError::DimensionTooLarge(n));
    }
    let sym = symmetric_part_checked(q)?;
    let eig = sym.symmetric_eigen();
    let v = &eig.eigenvectors;
    let rotated = v.transpose() * q * v;
    let anti = (&rotated - rotated.transpose()) * 0.5;
    let lambdas = eig.eigenvalues;

    let mut p = vec![0.0; n + 1];
    for mask in 0u32..(1u32 << n) {
        let k = mask.count_ones() as usize;
        let rest: Vec<usize> = (0..n).filter(|i| mask & (1 << i) == 0).collect();
        if rest.len() % 2 == 1 {
            continue;
        }
        let weight: f64 = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| lambdas[i])
            .product();
        let minor = if rest.is_empty() {
            1.0
        } else {
            DMatrix::from_fn(rest.len(), rest.len(), |i, j| anti[(rest[i], rest[j])]).determinant()
        };
        p[k] += weight * minor;
    }
    Ok(p)
}

/// Point `(s, t)` on the pseudo-circle `st = 1, t > 0` attached to a space-like
/// Lagrangian plane of `(R^n x R^n, dxdy)`.
///
/// The basis is orthonormalized for the induced metric and `(det A, det B)` is read
/// off the `n x 2n` row matrix `(A, B)`. The pair is returned on the `t > 0` sheet.
pub fn pseudo_phase(plane: &TangentPlane) -> Result<(f64, f64), PlaneError> {
    let defect = lagrangian_defect(plane);
    if defect > DEFAULT_TOL {
        return Err(PlaneError::NotLagrangian { defect });
    }
    let frame = orthonormalize(&plane.basis(), MetricSpec::DxDy, DEFAULT_TOL)?;
    let (s, t) = block_dets(&frame);
    Ok(if t < 0.0 { (-s, -t) } else { (s, t) })
}
