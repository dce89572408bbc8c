//! Numerical laboratory for special Lagrangian gradient graphs in pseudo-Euclidean space.
//!
//! The crate is layered bottom-up:
//!
//! * [`metric`]: exact linear algebra for oriented n-planes in `R^n x R^n`, the
//!   metric family `g_t`, the calibration forms and their inequalities.
//! * [`equation`]: the scalar operators `F^t` acting on Hessian eigenvalues.
//! * [`grid`] and [`geometry`]: sampled potentials and maps on rectangular grids,
//!   discrete Hessians, volume functionals and mean-curvature residuals.
//! * [`lewy`]: the rotations `phi_t` relating members of the equation family.
//! * [`solvers`]: desk-scale Dirichlet solvers producing potentials for the rest.

pub mod equation;
pub mod geometry;
pub mod grid;
pub mod lewy;
pub mod metric;
pub mod perturb;
pub mod solvers;

pub use equation::{EigenList, EquationError, EquationForm, FamilyPoint, RegimeClass};
pub use grid::{GridDomain, GridError, InteriorField, Mask, ScalarFieldGrid, VectorFieldGrid};
pub use metric::{MetricConstants, MetricSpec, PlaneError, Regime, TangentPlane};
