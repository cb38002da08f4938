//! Problem interface.
//!
//! A nonlinear program is posed as
//!
//! ```txt
//! minimize   f(z)
//! subject to cE(z)  = 0
//!            cI(z) <= 0
//!            l <= z <= u
//! ```
//!
//! Jacobians and the Hessian of the Lagrangian are reported as sparse
//! triplets with a fixed structure; only the values are re-evaluated per
//! iteration. The Hessian is the lower triangle of
//! `obj_factor * f''(z) + sum_i y_eq[i] cE_i''(z) + sum_j y_ineq[j] cI_j''(z)`.

/// Sparse nonlinear program with exact first and second derivatives.
pub trait Nlp {
    fn num_vars(&self) -> usize;
    fn num_eq(&self) -> usize;
    fn num_ineq(&self) -> usize;

    /// Fills simple bounds. Use `f64::NEG_INFINITY` / `f64::INFINITY` for
    /// absent bounds. Fixed variables (`l == u`) are not supported; model
    /// them as equality constraints.
    fn bounds(&self, lower: &mut [f64], upper: &mut [f64]);

    fn initial_point(&self, z: &mut [f64]);

    fn objective(&self, z: &[f64]) -> f64;
    fn gradient(&self, z: &[f64], grad: &mut [f64]);

    fn eq_constraints(&self, z: &[f64], out: &mut [f64]);
    fn ineq_constraints(&self, z: &[f64], out: &mut [f64]);

    /// Row-column pairs of the equality Jacobian, fixed for the problem's
    /// lifetime.
    fn eq_jacobian_structure(&self) -> Vec<(usize, usize)>;
    fn eq_jacobian_values(&self, z: &[f64], vals: &mut [f64]);

    fn ineq_jacobian_structure(&self) -> Vec<(usize, usize)>;
    fn ineq_jacobian_values(&self, z: &[f64], vals: &mut [f64]);

    /// Lower-triangle (i >= j) pairs of the Lagrangian Hessian.
    fn hessian_structure(&self) -> Vec<(usize, usize)>;
    fn hessian_values(
        &self,
        z: &[f64],
        obj_factor: f64,
        y_eq: &[f64],
        y_ineq: &[f64],
        vals: &mut [f64],
    );
}

/// Primal-dual iterate carried between solves for warm starting.
#[derive(Clone, Debug, Default)]
pub struct WarmStart {
    pub z: Vec<f64>,
    pub y_eq: Vec<f64>,
    pub y_ineq: Vec<f64>,
}
