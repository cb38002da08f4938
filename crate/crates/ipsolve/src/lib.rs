//! A small interior-point solver for sparse nonlinear programs.
//!
//! Built for trajectory-optimization workloads whose KKT systems are banded
//! under a stage-wise ordering; the solver discovers that ordering itself via
//! reverse Cuthill-McKee, so callers only describe sparsity. Second
//! derivatives are required (exact Lagrangian Hessian), steps are globalized
//! with a filter line search, and indefiniteness is handled by an
//! inertia-corrected diagonal shift.

pub mod banded;
pub mod ipm;
pub mod order;
pub mod problem;

pub use ipm::{solve, IpmOptions, IpmSolution, IpmStatus};
pub use problem::{Nlp, WarmStart};
