//! Dirichlet solvers on rectangular grids: the linear Poisson problem and damped
//! Newton for `det D^2 u = c^2` and `F^t(D^2 u) = c`.

mod banded;

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use banded::{BandMatrix, SingularPivot};

use crate::equation::{
    classify_regime, f_t, f_t_gradient, EquationError, FamilyPoint, RegimeClass,
};
use crate::geometry::hessian_at;
use crate::grid::{interior_indices, GridDomain, GridError, InteriorField, ScalarFieldGrid};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Equation(#[from] EquationError),
    #[error("{0}")]
    Unsupported(&'static str),
    #[error("boundary data has {got} values, the grid has {expected} boundary nodes")]
    BoundaryLength { expected: usize, got: usize },
    #[error("initial guess is not admissible at {location:?}: {reason}")]
    InadmissibleGuess { location: Vec<f64>, reason: String },
    #[error("no damped step keeps every nodal Hessian positive definite (iteration {iteration}, residual {residual:e})")]
    LeftEllipticBranch { iteration: usize, residual: f64 },
    #[error(
        "no damped step keeps the graph space-like (iteration {iteration}, residual {residual:e})"
    )]
    LeftSpacelike { iteration: usize, residual: f64 },
    #[error("no convergence after {iterations} iterations, residual {residual:e}")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("linear system is singular at row {}", .0.row)]
    Singular(SingularPivot),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum BoundarySource {
    Expression(String),
    GridFile(PathBuf),
}

/// Dirichlet values on every boundary node, in [`GridDomain::boundary_nodes`] order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryData {
    pub trace: Vec<f64>,
    pub source: BoundarySource,
}

impl BoundaryData {
    pub fn from_fn<F: Fn(&[f64]) -> f64>(
        domain: &GridDomain,
        id: &str,
        f: F,
    ) -> Result<Self, SolverError> {
        let trace: Vec<f64> = domain
            .boundary_nodes()
            .into_iter()
            .map(|i| f(&domain.node_coord(i)))
            .collect();
        if let Some(i) = trace.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i).into());
        }
        Ok(Self {
            trace,
            source: BoundarySource::Expression(id.to_string()),
        })
    }

    /// Takes the boundary nodes of a grid; interior values are ignored.
    pub fn from_grid(grid: &ScalarFieldGrid, id: &str) -> Result<Self, SolverError> {
        if grid.mask.is_some() {
            return Err(SolverError::Unsupported(
                "solvers need an unmasked rectangular grid",
            ));
        }
        Ok(Self {
            trace: grid
                .domain
                .boundary_nodes()
                .into_iter()
                .map(|i| grid.values[i])
                .collect(),
            source: BoundarySource::Expression(id.to_string()),
        })
    }

    pub fn read(path: &Path) -> Result<(GridDomain, Self), SolverError> {
        let grid = ScalarFieldGrid::read(path)?;
        let mut data = Self::from_grid(&grid, "")?;
        data.source = BoundarySource::GridFile(path.to_path_buf());
        Ok((grid.domain, data))
    }

    fn check(&self, domain: &GridDomain) -> Result<Vec<usize>, SolverError> {
        let nodes = domain.boundary_nodes();
        if nodes.len() != self.trace.len() {
            return Err(SolverError::BoundaryLength {
                expected: nodes.len(),
                got: self.trace.len(),
            });
        }
        if let Some(i) = self.trace.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(nodes[i]).into());
        }
        Ok(nodes)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialGuess {
    /// Least-squares quadratic through the boundary values.
    QuadraticFit,
    /// Interior values of this grid; its boundary values are replaced by the data.
    Provided(ScalarFieldGrid),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop once the sup-norm of the nodal residual drops to this.
    pub tolerance: f64,
    /// Step length factor per backtracking halving.
    pub damping: f64,
    pub max_halvings: usize,
    pub initial_guess: InitialGuess,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-10,
            damping: 0.5,
            max_halvings: 30,
            initial_guess: InitialGuess::QuadraticFit,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    /// Sup-norm residual before each step and after the last one.
    pub residual_history: Vec<f64>,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub u: ScalarFieldGrid,
    pub report: SolverReport,
    /// Nodewise classification on the margin-one interior; `None` for the linear
    /// and Monge-Ampere solvers.
    pub regimes: Option<InteriorField<RegimeClass>>,
}

/// Maps node indices to unknowns on the margin-one interior.
struct Unknowns {
    nodes: Vec<usize>,
    slot: Vec<Option<usize>>,
    band: usize,
}

impl Unknowns {
    fn new(domain: &GridDomain) -> Self {
        let nodes: Vec<usize> = interior_indices(domain, 1)
            .iter()
            .map(|m| domain.index(m))
            .collect();
        let mut slot = vec![None; domain.len()];
        for (k, &i) in nodes.iter().enumerate() {
            slot[i] = Some(k);
        }
        let band = interior_reach(domain);
        Self { nodes, slot, band }
    }
}

fn interior_reach(domain: &GridDomain) -> usize {
    // offset in unknown numbering of the (+1, ..., +1) neighbour
    let inner: Vec<usize> = domain
        .resolution
        .iter()
        .map(|r| r.saturating_sub(2))
        .collect();
    let n = inner.len();
    (0..n)
        .map(|k| inner[k + 1..].iter().product::<usize>())
        .sum()
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves `Delta_h u = source` in place; boundary entries of `values` are the data.
/// Returns the linear residuals seen during iterative refinement.
fn laplace_dirichlet(
    domain: &GridDomain,
    source: f64,
    values: &mut [f64],
) -> Result<Vec<f64>, SolverError> {
    let unknowns = Unknowns::new(domain);
    let h = domain.spacing();
    let s = domain.strides();
    let m = unknowns.nodes.len();
    let mut mat = BandMatrix::zeros(m, unknowns.band, unknowns.band);
    let mut rhs = vec![source; m];
    for (row, &c) in unknowns.nodes.iter().enumerate() {
        for k in 0..domain.dim() {
            let w = 1.0 / (h[k] * h[k]);
            mat.add(row, row, -2.0 * w);
            for nb in [c + s[k], c - s[k]] {
                match unknowns.slot[nb] {
                    Some(col) => mat.add(row, col, w),
                    None => rhs[row] -= w * values[nb],
                }
            }
        }
    }
    let original = mat.clone();
    mat.factor().map_err(SolverError::Singular)?;
    let mut x = mat.solve(&rhs);
    let mut history = Vec::new();
    // iterative refinement against the unfactored operator
    for _ in 0..3 {
        let ax = original.mul_vec(&x);
        let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let res = sup(&r);
        history.push(res);
        if res <= 1e-12 {
            break;
        }
        let dx = mat.solve(&r);
        x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
    }
    for (&i, &v) in unknowns.nodes.iter().zip(&x) {
        values[i] = v;
    }
    Ok(history)
}

/// Solves `Delta_h u = -2a` with the 5-point Laplacian.
pub fn solve_poisson(
    domain: &GridDomain,
    a: f64,
    bc: &BoundaryData,
) -> Result<Solution, SolverError> {
    if domain.dim() != 2 {
        return Err(SolverError::Unsupported(
            "the Poisson solver is two-dimensional",
        ));
    }
    let boundary = bc.check(domain)?;
    let mut values = vec![0.0; domain.len()];
    for (&i, &v) in boundary.iter().zip(&bc.trace) {
        values[i] = v;
    }
    let mut history = laplace_dirichlet(domain, -2.0 * a, &mut values)?;
    let u = ScalarFieldGrid::new(domain.clone(), values)?;
    let residual = poisson_residual(&u, a);
    history.push(residual);
    if residual > 1e-10 {
        return Err(SolverError::NotConverged {
            iterations: 1,
            residual,
        });
    }
    Ok(Solution {
        u,
        report: SolverReport {
            iterations: 1,
            residual_history: history,
            residual,
        },
        regimes: None,
    })
}

/// `max |Delta_h u + 2a|` over the margin-one interior.
pub fn poisson_residual(u: &ScalarFieldGrid, a: f64) -> f64 {
    let d = &u.domain;
    interior_indices(d, 1)
        .iter()
        .map(|m| (hessian_at(&u.values, d, m).trace() + 2.0 * a).abs())
        .fold(0.0, f64::max)
}

/// A pointwise operator `G(D^2 u)` with its derivative in the Hessian entries.
#[derive(Clone, Copy, Debug)]
enum NodalOperator {
    MongeAmpere { c2: f64 },
    Family(FamilyPoint),
}

enum NodalFailure {
    Branch(String),
}

impl NodalOperator {
    /// Residual and `dG/dH` (symmetric) at one Hessian, or why the node is inadmissible.
    fn eval(&self, h: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>), NodalFailure> {
        match *self {
            NodalOperator::MongeAmpere { c2 } => {
                let Some(chol) = h.clone().cholesky() else {
                    return Err(NodalFailure::Branch(
                        "Hessian is not positive definite".into(),
                    ));
                };
                let det = chol.determinant();
                let inv = chol.inverse();
                Ok((det - c2, inv * det))
            }
            NodalOperator::Family(point) => {
                let eig = h.clone().symmetric_eigen();
                let lambdas: Vec<f64> = eig.eigenvalues.iter().copied().collect();
                if !classify_regime(&lambdas, &point).spacelike {
                    return Err(NodalFailure::Branch(format!(
                        "eigenvalues {lambdas:?} are not space-like"
                    )));
                }
                let value =
                    f_t(&lambdas, &point).map_err(|e| NodalFailure::Branch(e.to_string()))?;
                let grad = f_t_gradient(&lambdas, &point)
                    .map_err(|e| NodalFailure::Branch(e.to_string()))?;
                let v = &eig.eigenvectors;
                let dg = v * DMatrix::from_diagonal(&DVector::from_vec(grad)) * v.transpose();
                Ok((value - point.c, dg))
            }
        }
    }
}

struct NodalState {
    residual: Vec<f64>,
    derivatives: Vec<DMatrix<f64>>,
}

fn evaluate(
    op: &NodalOperator,
    values: &[f64],
    domain: &GridDomain,
    unknowns: &Unknowns,
) -> Result<NodalState, (usize, String)> {
    let results: Vec<Result<(f64, DMatrix<f64>), NodalFailure>> = unknowns
        .nodes
        .par_iter()
        .map(|&i| op.eval(&hessian_at(values, domain, &domain.multi_index(i))))
        .collect();
    let mut residual = Vec::with_capacity(results.len());
    let mut derivatives = Vec::with_capacity(results.len());
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok((g, dg)) => {
                residual.push(g);
                derivatives.push(dg);
            }
            Err(NodalFailure::Branch(msg)) => return Err((unknowns.nodes[k], msg)),
        }
    }
    Ok(NodalState {
        residual,
        derivatives,
    })
}

/// Jacobian of the nodal residual with respect to interior values.
fn assemble(state: &NodalState, domain: &GridDomain, unknowns: &Unknowns) -> BandMatrix {
    let n = domain.dim();
    let h = domain.spacing();
    let s = domain.strides();
    let mut mat = BandMatrix::zeros(unknowns.nodes.len(), unknowns.band, unknowns.band);
    let rows: Vec<Vec<(usize, f64)>> = unknowns
        .nodes
        .par_iter()
        .zip(&state.derivatives)
        .map(|(&c, m)| {
            let mut entries: Vec<(usize, f64)> = Vec::with_capacity(1 + 2 * n + 2 * n * n);
            for j in 0..n {
                let w = m[(j, j)] / (h[j] * h[j]);
                entries.push((c, -2.0 * w));
                entries.push((c + s[j], w));
                entries.push((c - s[j], w));
                for k in j + 1..n {
                    let w = 2.0 * m[(j, k)] / (4.0 * h[j] * h[k]);
                    entries.push((c + s[j] + s[k], w));
                    entries.push((c + s[j] - s[k], -w));
                    entries.push((c - s[j] + s[k], -w));
                    entries.push((c - s[j] - s[k], w));
                }
            }
            entries
                .into_iter()
                .filter_map(|(node, w)| unknowns.slot[node].map(|col| (col, w)))
                .collect()
        })
        .collect();
    for (row, entries) in rows.into_iter().enumerate() {
        for (col, w) in entries {
            mat.add(row, col, w);
        }
    }
    mat
}

/// Least-squares quadratic `x^T A x / 2 + b.x + c0` through the boundary data.
pub fn quadratic_fit(
    domain: &GridDomain,
    bc: &BoundaryData,
) -> Result<(DMatrix<f64>, Vec<f64>, f64), SolverError> {
    let nodes = bc.check(domain)?;
    let n = domain.dim();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|j| (j..n).map(move |k| (j, k))).collect();
    let cols = pairs.len() + n + 1;
    let center = domain.center();
    let mut design = DMatrix::zeros(nodes.len(), cols);
    for (r, &i) in nodes.iter().enumerate() {
        let x: Vec<f64> = domain
            .node_coord(i)
            .iter()
            .zip(&center)
            .map(|(a, b)| a - b)
            .collect();
        for (q, &(j, k)) in pairs.iter().enumerate() {
            design[(r, q)] = if j == k {
                0.5 * x[j] * x[j]
            } else {
                x[j] * x[k]
            };
        }
        for j in 0..n {
            design[(r, pairs.len() + j)] = x[j];
        }
        design[(r, cols - 1)] = 1.0;
    }
    let rhs = DVector::from_column_slice(&bc.trace);
    let coef = design
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|_| SolverError::Unsupported("quadratic fit failed"))?;
    let mut a = DMatrix::zeros(n, n);
    for (q, &(j, k)) in pairs.iter().enumerate() {
        a[(j, k)] = coef[q];
        a[(k, j)] = coef[q];
    }
    // shift back from centred coordinates
    let xc = DVector::from_column_slice(&center);
    let bc_shift = DVector::from_iterator(n, (0..n).map(|j| coef[pairs.len() + j]));
    let b = &bc_shift - &a * &xc;
    let c0 = coef[cols - 1] + 0.5 * xc.dot(&(&a * &xc)) - bc_shift.dot(&xc);
    Ok((a, b.iter().copied().collect(), c0))
}

fn initial_values(
    domain: &GridDomain,
    bc: &BoundaryData,
    guess: &InitialGuess,
) -> Result<Vec<f64>, SolverError> {
    let nodes = bc.check(domain)?;
    let mut values = match guess {
        InitialGuess::QuadraticFit => {
            let (a, b, c0) = quadratic_fit(domain, bc)?;
            let fit = domain.samples(|x| {
                let xv = DVector::from_column_slice(x);
                0.5 * xv.dot(&(&a * &xv)) + b.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() + c0
            });
            // spread the boundary misfit harmonically so the guess has no kink at the edge
            let mut misfit = vec![0.0; domain.len()];
            for (&i, &v) in nodes.iter().zip(&bc.trace) {
                misfit[i] = v - fit[i];
            }
            laplace_dirichlet(domain, 0.0, &mut misfit)?;
            fit.iter().zip(&misfit).map(|(f, w)| f + w).collect()
        }
        InitialGuess::Provided(grid) => {
            if grid.domain != *domain {
                return Err(GridError::DomainMismatch.into());
            }
            grid.values.clone()
        }
    };
    for (&i, &v) in nodes.iter().zip(&bc.trace) {
        values[i] = v;
    }
    Ok(values)
}

fn newton(
    op: NodalOperator,
    domain: &GridDomain,
    bc: &BoundaryData,
    cfg: &SolverConfig,
    branch_error: fn(usize, f64) -> SolverError,
) -> Result<(ScalarFieldGrid, SolverReport), SolverError> {
    if cfg.max_iterations == 0
        || !(cfg.tolerance > 0.0)
        || !(cfg.damping > 0.0 && cfg.damping < 1.0)
    {
        return Err(SolverError::Unsupported(
            "solver config needs iterations >= 1, tolerance > 0, damping in (0, 1)",
        ));
    }
    let unknowns = Unknowns::new(domain);
    let mut values = initial_values(domain, bc, &cfg.initial_guess)?;
    let mut state = evaluate(&op, &values, domain, &unknowns).map_err(|(node, reason)| {
        SolverError::InadmissibleGuess {
            location: domain.node_coord(node),
            reason,
        }
    })?;
    let mut history = vec![sup(&state.residual)];
    for iteration in 0..cfg.max_iterations {
        let current = *history.last().unwrap();
        if current <= cfg.tolerance {
            return Ok((
                ScalarFieldGrid::new(domain.clone(), values)?,
                SolverReport {
                    iterations: iteration,
                    residual_history: history,
                    residual: current,
                },
            ));
        }
        let mut jac = assemble(&state, domain, &unknowns);
        jac.factor().map_err(SolverError::Singular)?;
        let step = jac.solve(&state.residual);
        let norm = l2(&state.residual);

        let mut length = 1.0;
        let mut admissible_seen = false;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let mut trial = values.clone();
            for (&i, d) in unknowns.nodes.iter().zip(&step) {
                trial[i] -= length * d;
            }
            if let Ok(next) = evaluate(&op, &trial, domain, &unknowns) {
                admissible_seen = true;
                if l2(&next.residual) < norm {
                    accepted = Some((trial, next));
                    break;
                }
            }
            length *= cfg.damping;
        }
        match accepted {
            Some((trial, next)) => {
                values = trial;
                state = next;
                history.push(sup(&state.residual));
            }
            None if !admissible_seen => return Err(branch_error(iteration, current)),
            None => {
                return Err(SolverError::NotConverged {
                    iterations: iteration,
                    residual: current,
                })
            }
        }
    }
    let residual = *history.last().unwrap();
    if residual <= cfg.tolerance {
        return Ok((
            ScalarFieldGrid::new(domain.clone(), values)?,
            SolverReport {
                iterations: cfg.max_iterations,
                residual_history: history,
                residual,
            },
        ));
    }
    Err(SolverError::NotConverged {
        iterations: cfg.max_iterations,
        residual,
    })
}

/// Solves `det D^2_h u = c^2` among discretely convex functions.
pub fn solve_monge_ampere(
    domain: &GridDomain,
    c: f64,
    bc: &BoundaryData,
    cfg: &SolverConfig,
) -> Result<Solution, SolverError> {
    if !(c > 0.0) {
        return Err(SolverError::Unsupported(
            "the Monge-Ampere right-hand side must be positive",
        ));
    }
    let (u, report) = newton(
        NodalOperator::MongeAmpere { c2: c * c },
        domain,
        bc,
        cfg,
        |iteration, residual| SolverError::LeftEllipticBranch {
            iteration,
            residual,
        },
    )?;
    Ok(Solution {
        u,
        report,
        regimes: None,
    })
}

/// Solves `F^t(D^2_h u) = c` among space-like gradient graphs.
pub fn solve_family(
    domain: &GridDomain,
    t: f64,
    c: f64,
    bc: &BoundaryData,
    cfg: &SolverConfig,
) -> Result<Solution, SolverError> {
    let point = FamilyPoint::new(t, c)?;
    let (u, report) = newton(
        NodalOperator::Family(point),
        domain,
        bc,
        cfg,
        |iteration, residual| SolverError::LeftSpacelike {
            iteration,
            residual,
        },
    )?;
    let nodes = interior_indices(domain, 1);
    let regimes = InteriorField {
        domain: domain.clone(),
        margin: 1,
        values: nodes
            .iter()
            .map(|m| {
                let eig: Vec<f64> = hessian_at(&u.values, domain, m)
                    .symmetric_eigenvalues()
                    .iter()
                    .copied()
                    .collect();
                classify_regime(&eig, &point)
            })
            .collect(),
    };
    Ok(Solution {
        u,
        report,
        regimes: Some(regimes),
    })
}
