//! Solver validation on small programs with independently known optima.
//!
//! Expected values are closed-form or published reference solutions, frozen
//! here as literals; nothing in this file depends on the solver's own output.

use ipsolve::{solve, IpmOptions, IpmStatus, Nlp, WarmStart};

fn opts() -> IpmOptions {
    IpmOptions {
        tol: 1e-8,
        tol_feas: 1e-10,
        ..IpmOptions::default()
    }
}

/// minimize 0.5 |z|^2  s.t.  z1 + z2 = 2. Lagrange gives z = (1, 1).
struct EqQp;

impl Nlp for EqQp {
    fn num_vars(&self) -> usize {
        2
    }
    fn num_eq(&self) -> usize {
        1
    }
    fn num_ineq(&self) -> usize {
        0
    }
    fn bounds(&self, _l: &mut [f64], _u: &mut [f64]) {}
    fn initial_point(&self, z: &mut [f64]) {
        z.copy_from_slice(&[5.0, -3.0]);
    }
    fn objective(&self, z: &[f64]) -> f64 {
        0.5 * (z[0] * z[0] + z[1] * z[1])
    }
    fn gradient(&self, z: &[f64], g: &mut [f64]) {
        g.copy_from_slice(z);
    }
    fn eq_constraints(&self, z: &[f64], out: &mut [f64]) {
        out[0] = z[0] + z[1] - 2.0;
    }
    fn ineq_constraints(&self, _z: &[f64], _out: &mut [f64]) {}
    fn eq_jacobian_structure(&self) -> Vec<(usize, usize)> {
        vec![(0, 0), (0, 1)]
    }
    fn eq_jacobian_values(&self, _z: &[f64], vals: &mut [f64]) {
        vals.copy_from_slice(&[1.0, 1.0]);
    }
    fn ineq_jacobian_structure(&self) -> Vec<(usize, usize)> {
        vec![]
    }
    fn ineq_jacobian_values(&self, _z: &[f64], _vals: &mut [f64]) {}
    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        vec![(0, 0), (1, 1)]
    }
    fn hessian_values(&self, _z: &[f64], of: f64, _ye: &[f64], _yi: &[f64], vals: &mut [f64]) {
        vals[0] = of;
        vals[1] = of;
    }
}

#[test]
fn equality_qp_matches_closed_form() {
    let sol = solve(&EqQp, &opts(), None);
    assert_eq!(sol.status, IpmStatus::Converged);
    assert!((sol.z[0] - 1.0).abs() < 1e-6, "z0 = {}", sol.z[0]);
    assert!((sol.z[1] - 1.0).abs() < 1e-6, "z1 = {}", sol.z[1]);
    assert!((sol.objective - 1.0).abs() < 1e-6);
    // KKT: grad + A^T y = 0 at (1,1) gives y = -1.
    assert!((sol.y_eq[0] + 1.0).abs() < 1e-5, "y = {}", sol.y_eq[0]);
}

/// Rosenbrock in two variables, minimum f = 0 at (1, 1).
struct Rosenbrock;

impl Nlp for Rosenbrock {
    fn num_vars(&self) -> usize {
        2
    }
    fn num_eq(&self) -> usize {
        0
    }
    fn num_ineq(&self) -> usize {
        0
    }
    fn bounds(&self, _l: &mut [f64], _u: &mut [f64]) {}
    fn initial_point(&self, z: &mut [f64]) {
        z.copy_from_slice(&[-1.2, 1.0]);
    }
    fn objective(&self, z: &[f64]) -> f64 {
        let (x, y) = (z[0], z[1]);
        (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
    }
    fn gradient(&self, z: &[f64], g: &mut [f64]) {
        let (x, y) = (z[0], z[1]);
        g[0] = -2.0 * (1.0 - x) - 400.0 * x * (y - x * x);
        g[1] = 200.0 * (y - x * x);
    }
    fn eq_constraints(&self, _z: &[f64], _out: &mut [f64]) {}
    fn ineq_constraints(&self, _z: &[f64], _out: &mut [f64]) {}
    fn eq_jacobian_structure(&self) -> Vec<(usize, usize)> {
        vec![]
    }
    fn eq_jacobian_values(&self, _z: &[f64], _vals: &mut [f64]) {}
    fn ineq_jacobian_structure(&self) -> Vec<(usize, usize)> {
        vec![]
    }
    fn ineq_jacobian_values(&self, _z: &[f64], _vals: &mut [f64]) {}
    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        vec![(0, 0), (1, 0), (1, 1)]
    }
    fn hessian_values(&self, z: &[f64], of: f64, _ye: &[f64], _yi: &[f64], vals: &mut [f64]) {
        let (x, y) = (z[0], z[1]);
        vals[0] = of * (2.0 - 400.0 * (y - x * x) + 800.0 * x * x);
        vals[1] = of * (-400.0 * x);
        vals[2] = of * 200.0;
    }
}

#[test]
fn rosenbrock_reaches_global_minimum() {
    let sol = solve(&Rosenbrock, &opts(), None);
    assert_eq!(sol.status, IpmStatus::Converged);
    assert!((sol.z[0] - 1.0).abs() < 1e-6);
    assert!((sol.z[1] - 1.0).abs() < 1e-6);
    assert!(sol.objective.abs() < 1e-10);
}

/// Hock-Schittkowski 71. Reference optimum
/// x* = (1, 4.7429994, 3.8211503, 1.3794082), f* = 17.0140173.
struct Hs071;

impl Nlp for Hs071 {
    fn num_vars(&self) -> usize {
        4
    }
    fn num_eq(&self) -> usize {
        1
    }
    fn num_ineq(&self) -> usize {
        1
    }
    fn bounds(&self, l: &mut [f64], u: &mut [f64]) {
        l.fill(1.0);
        u.fill(5.0);
    }
    fn initial_point(&self, z: &mut [f64]) {
        z.copy_from_slice(&[1.0, 5.0, 5.0, 1.0]);
    }
    fn objective(&self, z: &[f64]) -> f64 {
        z[0] * z[3] * (z[0] + z[1] + z[2]) + z[2]
    }
    fn gradient(&self, z: &[f64], g: &mut [f64]) {
        g[0] = z[3] * (2.0 * z[0] + z[1] + z[2]);
        g[1] = z[0] * z[3];
        g[2] = z[0] * z[3] + 1.0;
        g[3] = z[0] * (z[0] + z[1] + z[2]);
    }
    fn eq_constraints(&self, z: &[f64], out: &mut [f64]) {
        out[0] = z.iter().map(|v| v * v).sum::<f64>() - 40.0;
    }
    fn ineq_constraints(&self, z: &[f64], out: &mut [f64]) {
        // x1 x2 x3 x4 >= 25 in c(z) <= 0 form.
        out[0] = 25.0 - z[0] * z[1] * z[2] * z[3];
    }
    fn eq_jacobian_structure(&self) -> Vec<(usize, usize)> {
        (0..4).map(|c| (0, c)).collect()
    }
    fn eq_jacobian_values(&self, z: &[f64], vals: &mut [f64]) {
        for (v, x) in vals.iter_mut().zip(z) {
            *v = 2.0 * x;
        }
    }
    fn ineq_jacobian_structure(&self) -> Vec<(usize, usize)> {
        (0..4).map(|c| (0, c)).collect()
    }
    fn ineq_jacobian_values(&self, z: &[f64], vals: &mut [f64]) {
        vals[0] = -z[1] * z[2] * z[3];
        vals[1] = -z[0] * z[2] * z[3];
        vals[2] = -z[0] * z[1] * z[3];
        vals[3] = -z[0] * z[1] * z[2];
    }
    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        vec![
            (0, 0),
            (1, 0),
            (2, 0),
            (3, 0),
            (1, 1),
            (2, 1),
            (3, 1),
            (2, 2),
            (3, 2),
            (3, 3),
        ]
    }
    fn hessian_values(&self, z: &[f64], of: f64, ye: &[f64], yi: &[f64], vals: &mut [f64]) {
        let (x1, x2, x3, x4) = (z[0], z[1], z[2], z[3]);
        let (e, i) = (ye[0], yi[0]);
        vals[0] = of * 2.0 * x4 + e * 2.0;
        vals[1] = of * x4 + i * (-x3 * x4);
        vals[2] = of * x4 + i * (-x2 * x4);
        vals[3] = of * (2.0 * x1 + x2 + x3) + i * (-x2 * x3);
        vals[4] = e * 2.0;
        vals[5] = i * (-x1 * x4);
        vals[6] = of * x1 + i * (-x1 * x3);
        vals[7] = e * 2.0;
        vals[8] = of * x1 + i * (-x1 * x2);
        vals[9] = e * 2.0;
    }
}

#[test]
fn hs071_matches_reference_optimum() {
    let sol = solve(&Hs071, &opts(), None);
    assert_eq!(sol.status, IpmStatus::Converged);
    let expected = [1.0, 4.742_999_4, 3.821_150_3, 1.379_408_2];
    for (zi, ei) in sol.z.iter().zip(&expected) {
        assert!((zi - ei).abs() < 1e-6, "z = {:?}", sol.z);
    }
    assert!((sol.objective - 17.014_017_3).abs() < 1e-6);
}

#[test]
fn hs071_warm_start_resolves_quickly() {
    let cold = solve(&Hs071, &opts(), None);
    let warm = WarmStart {
        z: cold.z.clone(),
        y_eq: cold.y_eq.clone(),
        y_ineq: cold.y_ineq.clone(),
    };
    let mut o = opts();
    o.mu_init = 1e-7;
    let resolved = solve(&Hs071, &o, Some(&warm));
    assert_eq!(resolved.status, IpmStatus::Converged);
    assert!(
        resolved.iterations <= 10,
        "warm start took {} iterations",
        resolved.iterations
    );
}

/// Box-constrained quadratic: min |z - c|^2, z in [0, 1]^3 with c outside the
/// box; the optimum is c clipped onto the box.
struct BoxQp;

impl Nlp for BoxQp {
    fn num_vars(&self) -> usize {
        3
    }
    fn num_eq(&self) -> usize {
        0
    }
    fn num_ineq(&self) -> usize {
        0
    }
    fn bounds(&self, l: &mut [f64], u: &mut [f64]) {
        l.fill(0.0);
        u.fill(1.0);
    }
    fn initial_point(&self, z: &mut [f64]) {
        z.fill(0.5);
    }
    fn objective(&self, z: &[f64]) -> f64 {
        let c = [2.0, -1.0, 0.25];
        z.iter().zip(&c).map(|(v, ci)| (v - ci) * (v - ci)).sum()
    }
    fn gradient(&self, z: &[f64], g: &mut [f64]) {
        let c = [2.0, -1.0, 0.25];
        for ((gi, v), ci) in g.iter_mut().zip(z).zip(&c) {
            *gi = 2.0 * (v - ci);
        }
    }
    fn eq_constraints(&self, _z: &[f64], _out: &mut [f64]) {}
    fn ineq_constraints(&self, _z: &[f64], _out: &mut [f64]) {}
    fn eq_jacobian_structure(&self) -> Vec<(usize, usize)> {
        vec![]
    }
    fn eq_jacobian_values(&self, _z: &[f64], _vals: &mut [f64]) {}
    fn ineq_jacobian_structure(&self) -> Vec<(usize, usize)> {
        vec![]
    }
    fn ineq_jacobian_values(&self, _z: &[f64], _vals: &mut [f64]) {}
    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        (0..3).map(|j| (j, j)).collect()
    }
    fn hessian_values(&self, _z: &[f64], of: f64, _ye: &[f64], _yi: &[f64], vals: &mut [f64]) {
        vals.fill(2.0 * of);
    }
}

#[test]
fn box_qp_clips_to_bounds() {
    let sol = solve(&BoxQp, &opts(), None);
    assert_eq!(sol.status, IpmStatus::Converged);
    let expected = [1.0, 0.0, 0.25];
    for (zi, ei) in sol.z.iter().zip(&expected) {
        assert!((zi - ei).abs() < 1e-6, "z = {:?}", sol.z);
    }
}

/// min x + y  s.t.  x^2 + y^2 <= 2. Optimum at x = y = -1, f = -2.
struct DiskLp;

impl Nlp for DiskLp {
    fn num_vars(&self) -> usize {
        2
    }
    fn num_eq(&self) -> usize {
        0
    }
    fn num_ineq(&self) -> usize {
        1
    }
    fn bounds(&self, _l: &mut [f64], _u: &mut [f64]) {}
    fn initial_point(&self, z: &mut [f64]) {
        z.copy_from_slice(&[0.3, -0.2]);
    }
    fn objective(&self, z: &[f64]) -> f64 {
        z[0] + z[1]
    }
    fn gradient(&self, _z: &[f64], g: &mut [f64]) {
        g.fill(1.0);
    }
    fn eq_constraints(&self, _z: &[f64], _out: &mut [f64]) {}
    fn ineq_constraints(&self, z: &[f64], out: &mut [f64]) {
        out[0] = z[0] * z[0] + z[1] * z[1] - 2.0;
    }
    fn eq_jacobian_structure(&self) -> Vec<(usize, usize)> {
        vec![]
    }
    fn eq_jacobian_values(&self, _z: &[f64], _vals: &mut [f64]) {}
    fn ineq_jacobian_structure(&self) -> Vec<(usize, usize)> {
        vec![(0, 0), (0, 1)]
    }
    fn ineq_jacobian_values(&self, z: &[f64], vals: &mut [f64]) {
        vals[0] = 2.0 * z[0];
        vals[1] = 2.0 * z[1];
    }
    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        vec![(0, 0), (1, 1)]
    }
    fn hessian_values(&self, _z: &[f64], _of: f64, _ye: &[f64], yi: &[f64], vals: &mut [f64]) {
        vals[0] = 2.0 * yi[0];
        vals[1] = 2.0 * yi[0];
    }
}

#[test]
fn disk_constrained_linear_objective() {
    let sol = solve(&DiskLp, &opts(), None);
    assert_eq!(sol.status, IpmStatus::Converged);
    assert!((sol.z[0] + 1.0).abs() < 1e-6, "z = {:?}", sol.z);
    assert!((sol.z[1] + 1.0).abs() < 1e-6);
    assert!((sol.objective + 2.0).abs() < 1e-6);
    // Active constraint: multiplier 0.5 from stationarity 1 + 2 w x = 0.
    assert!((sol.y_ineq[0] - 0.5).abs() < 1e-5);
}

/// A point that already satisfies the first-order conditions must be accepted
/// without taking a step.
struct AlreadyOptimal;

impl Nlp for AlreadyOptimal {
    fn num_vars(&self) -> usize {
        3
    }
    fn num_eq(&self) -> usize {
        0
    }
    fn num_ineq(&self) -> usize {
        0
    }
    fn bounds(&self, _l: &mut [f64], _u: &mut [f64]) {}
    fn initial_point(&self, z: &mut [f64]) {
        z.fill(0.0);
    }
    fn objective(&self, z: &[f64]) -> f64 {
        z.iter().map(|v| v * v).sum()
    }
    fn gradient(&self, z: &[f64], g: &mut [f64]) {
        for (gi, v) in g.iter_mut().zip(z) {
            *gi = 2.0 * v;
        }
    }
    fn eq_constraints(&self, _z: &[f64], _out: &mut [f64]) {}
    fn ineq_constraints(&self, _z: &[f64], _out: &mut [f64]) {}
    fn eq_jacobian_structure(&self) -> Vec<(usize, usize)> {
        vec![]
    }
    fn eq_jacobian_values(&self, _z: &[f64], _vals: &mut [f64]) {}
    fn ineq_jacobian_structure(&self) -> Vec<(usize, usize)> {
        vec![]
    }
    fn ineq_jacobian_values(&self, _z: &[f64], _vals: &mut [f64]) {}
    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        (0..3).map(|j| (j, j)).collect()
    }
    fn hessian_values(&self, _z: &[f64], of: f64, _ye: &[f64], _yi: &[f64], vals: &mut [f64]) {
        vals.fill(2.0 * of);
    }
}

#[test]
fn stationary_start_returns_immediately() {
    let sol = solve(&AlreadyOptimal, &opts(), None);
    assert_eq!(sol.status, IpmStatus::Converged);
    assert!(sol.iterations <= 1, "took {} iterations", sol.iterations);
}
