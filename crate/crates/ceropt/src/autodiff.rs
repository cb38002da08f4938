//! Forward-mode automatic differentiation on small, statically sized tangent spaces.
//!
//! The model code in this crate is written once, generically over a scalar
//! type, and evaluated with plain `f64` for simulation, [`Dual`] for exact
//! first derivatives, and [`Dual2`] for exact dense Hessians. Tangent width is
//! a const generic, so every derivative sweep is allocation-free and the
//! compiler can unroll the small loops.
//!
//! Only the smooth primitives that the model actually uses are provided by the
//! [`Real`] trait. Anything else (comparisons on values, formatting, raw float
//! tricks) is deliberately unavailable on dual numbers, so a non-differentiable
//! operation slipping into model code fails to compile instead of silently
//! dropping derivative information.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

/// Scalar abstraction shared by `f64` and the dual types.
///
/// `val` exposes the primal value for branching and pivot selection; those
/// decisions are made on values only, which is the usual piecewise-smooth
/// interpretation.
pub trait Real:
    Copy
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
{
    fn from_f64(v: f64) -> Self;
    fn val(self) -> f64;
    /// Multiply by a constant (no derivative flows through `c`).
    fn scale(self, c: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn val(self) -> f64 {
        self
    }
    fn scale(self, c: f64) -> Self {
        self * c
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

/// First-order dual number: value plus an `N`-wide tangent row.
#[derive(Clone, Copy, Debug)]
pub struct Dual<const N: usize> {
    pub re: f64,
    pub eps: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn constant(v: f64) -> Self {
        Dual { re: v, eps: [0.0; N] }
    }

    /// An independent variable: value `v`, unit tangent in slot `i`.
    pub fn variable(v: f64, i: usize) -> Self {
        let mut eps = [0.0; N];
        eps[i] = 1.0;
        Dual { re: v, eps }
    }

    /// Seed the full vector `x` as independent variables.
    pub fn seed(x: &[f64; N]) -> [Dual<N>; N] {
        std::array::from_fn(|i| Dual::variable(x[i], i))
    }

    /// Unary chain rule: `f(self)` with derivative `d1` at `self.re`.
    fn chain(self, f: f64, d1: f64) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e *= d1;
        }
        Dual { re: f, eps }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self.re += rhs.re;
        for i in 0..N {
            self.eps[i] += rhs.eps[i];
        }
        self
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        self.re -= rhs.re;
        for i in 0..N {
            self.eps[i] -= rhs.eps[i];
        }
        self
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut eps = [0.0; N];
        for i in 0..N {
            eps[i] = self.eps[i] * rhs.re + self.re * rhs.eps[i];
        }
        Dual { re: self.re * rhs.re, eps }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.re;
        let re = self.re * inv;
        let mut eps = [0.0; N];
        for i in 0..N {
            eps[i] = (self.eps[i] - re * rhs.eps[i]) * inv;
        }
        Dual { re, eps }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    fn neg(mut self) -> Self {
        self.re = -self.re;
        for e in self.eps.iter_mut() {
            *e = -*e;
        }
        self
    }
}

impl<const N: usize> AddAssign for Dual<N> {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<const N: usize> SubAssign for Dual<N> {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<const N: usize> Real for Dual<N> {
    fn from_f64(v: f64) -> Self {
        Dual::constant(v)
    }
    fn val(self) -> f64 {
        self.re
    }
    fn scale(mut self, c: f64) -> Self {
        self.re *= c;
        for e in self.eps.iter_mut() {
            *e *= c;
        }
        self
    }
    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        self.chain(t, 1.0 - t * t)
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn powi(self, n: i32) -> Self {
        match n {
            0 => Dual::constant(1.0),
            1 => self,
            _ => self.chain(self.re.powi(n), f64::from(n) * self.re.powi(n - 1)),
        }
    }
}

/// Second-order dual number: value, gradient, and dense Hessian.
///
/// Quadratic storage keeps this practical only for the small tangent widths
/// used here (at most 12 for the stage-local curvature of the collocation
/// defects). All second-order chain rules are exact.
#[derive(Clone, Copy, Debug)]
pub struct Dual2<const N: usize> {
    pub re: f64,
    pub g: [f64; N],
    pub h: [[f64; N]; N],
}

impl<const N: usize> Dual2<N> {
    pub fn constant(v: f64) -> Self {
        Dual2 { re: v, g: [0.0; N], h: [[0.0; N]; N] }
    }

    pub fn variable(v: f64, i: usize) -> Self {
        let mut g = [0.0; N];
        g[i] = 1.0;
        Dual2 { re: v, g, h: [[0.0; N]; N] }
    }

    pub fn seed(x: &[f64; N]) -> [Dual2<N>; N] {
        std::array::from_fn(|i| Dual2::variable(x[i], i))
    }

    /// Unary chain rule with first and second derivatives of the outer map.
    fn chain(self, f: f64, d1: f64, d2: f64) -> Self {
        let mut out = Dual2::constant(f);
        for i in 0..N {
            out.g[i] = d1 * self.g[i];
        }
        for i in 0..N {
            for j in 0..N {
                out.h[i][j] = d1 * self.h[i][j] + d2 * self.g[i] * self.g[j];
            }
        }
        out
    }

    fn recip(self) -> Self {
        let v = self.re;
        self.chain(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))
    }
}

impl<const N: usize> Add for Dual2<N> {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self.re += rhs.re;
        for i in 0..N {
            self.g[i] += rhs.g[i];
            for j in 0..N {
                self.h[i][j] += rhs.h[i][j];
            }
        }
        self
    }
}

impl<const N: usize> Sub for Dual2<N> {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        self.re -= rhs.re;
        for i in 0..N {
            self.g[i] -= rhs.g[i];
            for j in 0..N {
                self.h[i][j] -= rhs.h[i][j];
            }
        }
        self
    }
}

impl<const N: usize> Mul for Dual2<N> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut out = Dual2::constant(self.re * rhs.re);
        for i in 0..N {
            out.g[i] = self.g[i] * rhs.re + self.re * rhs.g[i];
        }
        for i in 0..N {
            for j in 0..N {
                out.h[i][j] = self.h[i][j] * rhs.re
                    + self.re * rhs.h[i][j]
                    + self.g[i] * rhs.g[j]
                    + self.g[j] * rhs.g[i];
            }
        }
        out
    }
}

impl<const N: usize> Div for Dual2<N> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        self * rhs.recip()
    }
}

impl<const N: usize> Neg for Dual2<N> {
    type Output = Self;
    fn neg(mut self) -> Self {
        self.re = -self.re;
        for i in 0..N {
            self.g[i] = -self.g[i];
            for j in 0..N {
                self.h[i][j] = -self.h[i][j];
            }
        }
        self
    }
}

impl<const N: usize> AddAssign for Dual2<N> {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<const N: usize> SubAssign for Dual2<N> {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<const N: usize> Real for Dual2<N> {
    fn from_f64(v: f64) -> Self {
        Dual2::constant(v)
    }
    fn val(self) -> f64 {
        self.re
    }
    fn scale(mut self, c: f64) -> Self {
        self.re *= c;
        for i in 0..N {
            self.g[i] *= c;
            for j in 0..N {
                self.h[i][j] *= c;
            }
        }
        self
    }
    fn sin(self) -> Self {
        let (s, c) = self.re.sin_cos();
        self.chain(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = self.re.sin_cos();
        self.chain(c, -s, -c)
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        let sech2 = 1.0 - t * t;
        self.chain(t, sech2, -2.0 * t * sech2)
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e, e)
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * s * s))
    }
    fn powi(self, n: i32) -> Self {
        match n {
            0 => Dual2::constant(1.0),
            1 => self,
            _ => {
                let nf = f64::from(n);
                self.chain(
                    self.re.powi(n),
                    nf * self.re.powi(n - 1),
                    nf * (nf - 1.0) * self.re.powi(n - 2),
                )
            }
        }
    }
}

/// Gradient of a scalar function of `N` variables.
pub fn gradient<const N: usize, F>(f: F, x: &[f64; N]) -> (f64, [f64; N])
where
    F: FnOnce(&[Dual<N>; N]) -> Dual<N>,
{
    let out = f(&Dual::seed(x));
    (out.re, out.eps)
}

/// Value and dense Jacobian of an `N -> M` map.
pub fn jacobian<const N: usize, const M: usize, F>(f: F, x: &[f64; N]) -> ([f64; M], [[f64; N]; M])
where
    F: FnOnce(&[Dual<N>; N]) -> [Dual<N>; M],
{
    let out = f(&Dual::seed(x));
    (out.map(|d| d.re), out.map(|d| d.eps))
}

/// Value, gradient, and dense Hessian of a scalar function of `N` variables.
pub fn hessian<const N: usize, F>(f: F, x: &[f64; N]) -> (f64, [f64; N], [[f64; N]; N])
where
    F: FnOnce(&[Dual2<N>; N]) -> Dual2<N>,
{
    let out = f(&Dual2::seed(x));
    (out.re, out.g, out.h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SingularMatrix;

impl std::fmt::Display for SingularMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "dense linear solve hit a numerically singular pivot")
    }
}

impl std::error::Error for SingularMatrix {}

/// Solve the leading `m`-by-`m` block of `a * x = b` in place by Gaussian
/// elimination with partial pivoting; `b` is overwritten with the solution.
///
/// Pivots are chosen on primal values, so the operation stays differentiable
/// wherever the pivot choice is locally constant, which is everywhere the
/// matrix depends continuously on parameters. Generic over [`Real`] so
/// derivatives propagate straight through the solve.
pub fn solve_dense<T: Real, const M: usize>(
    a: &mut [[T; M]; M],
    b: &mut [T; M],
    m: usize,
) -> Result<(), SingularMatrix> {
    debug_assert!(m <= M);
    for col in 0..m {
        let mut piv = col;
        let mut best = a[col][col].val().abs();
        for row in col + 1..m {
            let mag = a[row][col].val().abs();
            if mag > best {
                best = mag;
                piv = row;
            }
        }
        if !(best > 1.0e-150) {
            return Err(SingularMatrix);
        }
        if piv != col {
            a.swap(piv, col);
            b.swap(piv, col);
        }
        let d = a[col][col];
        for row in col + 1..m {
            let factor = a[row][col] / d;
            for k in col + 1..m {
                let t = factor * a[col][k];
                a[row][k] -= t;
            }
            let t = factor * b[col];
            b[row] -= t;
            a[row][col] = T::zero();
        }
    }
    for col in (0..m).rev() {
        let mut acc = b[col];
        for k in col + 1..m {
            let t = a[col][k] * b[k];
            acc -= t;
        }
        b[col] = acc / a[col][col];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn central_diff<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        let h = 1.0e-6 * x.abs().max(1.0);
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn first_derivatives_match_analytic() {
        // f(x) = sin(x) exp(2x) + x^3, f'(x) = cos(x) e^{2x} + 2 sin(x) e^{2x} + 3 x^2
        for &x in &[-1.3, -0.2, 0.0, 0.7, 2.1] {
            let d = Dual::<1>::variable(x, 0);
            let y = d.sin() * (d.scale(2.0)).exp() + d.powi(3);
            let expected = x.cos() * (2.0 * x).exp() + 2.0 * x.sin() * (2.0 * x).exp() + 3.0 * x * x;
            assert_relative_eq!(y.re, x.sin() * (2.0 * x).exp() + x.powi(3), max_relative = 1e-14);
            assert_relative_eq!(y.eps[0], expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn division_and_sqrt_against_finite_differences() {
        let f = |x: f64| x.sin() / (1.0 + x * x) + (x * x + 0.5).sqrt();
        for &x in &[-2.0, -0.4, 0.3, 1.9] {
            let d = Dual::<1>::variable(x, 0);
            let one = Dual::constant(1.0);
            let y = d.sin() / (one + d * d) + (d * d + Dual::constant(0.5)).sqrt();
            assert_relative_eq!(y.eps[0], central_diff(f, x), epsilon = 1e-8);
        }
    }

    #[test]
    fn jacobian_of_identity_is_identity() {
        let x = [0.3, -1.2, 2.5];
        let (vals, jac) = jacobian(|v: &[Dual<3>; 3]| *v, &x);
        assert_eq!(vals, x);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(jac[i][j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn hessian_matches_analytic_mixed_partials() {
        // f(x, y) = sin(x) exp(y) + x y^2
        let (val, g, h) = hessian(
            |v: &[Dual2<2>; 2]| v[0].sin() * v[1].exp() + v[0] * v[1] * v[1],
            &[0.7, -0.3],
        );
        let (x, y) = (0.7_f64, -0.3_f64);
        assert_relative_eq!(val, x.sin() * y.exp() + x * y * y, max_relative = 1e-14);
        assert_relative_eq!(g[0], x.cos() * y.exp() + y * y, max_relative = 1e-13);
        assert_relative_eq!(g[1], x.sin() * y.exp() + 2.0 * x * y, max_relative = 1e-13);
        assert_relative_eq!(h[0][0], -x.sin() * y.exp(), max_relative = 1e-13);
        assert_relative_eq!(h[1][1], x.sin() * y.exp() + 2.0 * x, max_relative = 1e-13);
        assert_relative_eq!(h[0][1], x.cos() * y.exp() + 2.0 * y, max_relative = 1e-13);
        assert_relative_eq!(h[0][1], h[1][0], max_relative = 1e-15);
    }

    #[test]
    fn hessian_of_tanh_composition() {
        // f(x) = tanh(3x), f'' = -18 tanh(3x) sech^2(3x)
        for &x in &[-0.8, 0.1, 0.6] {
            let (_, _, h) = hessian(|v: &[Dual2<1>; 1]| v[0].scale(3.0).tanh(), &[x]);
            let t = (3.0 * x).tanh();
            assert_relative_eq!(h[0][0], -18.0 * t * (1.0 - t * t), max_relative = 1e-11);
        }
    }

    #[test]
    fn solve_dense_recovers_known_solution() {
        let mut a = [
            [4.0, 1.0, 0.0, 0.5],
            [1.0, 3.0, -1.0, 0.0],
            [0.0, -1.0, 2.5, 0.7],
            [0.5, 0.0, 0.7, 5.0],
        ];
        let x_true = [1.0, -2.0, 0.5, 3.0];
        let mut b = [0.0; 4];
        for i in 0..4 {
            for j in 0..4 {
                b[i] += a[i][j] * x_true[j];
            }
        }
        solve_dense(&mut a, &mut b, 4).unwrap();
        for i in 0..4 {
            assert_relative_eq!(b[i], x_true[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn solve_dense_reports_singularity() {
        let mut a = [[1.0, 2.0], [2.0, 4.0]];
        let mut b = [1.0, 2.0];
        assert_eq!(solve_dense(&mut a, &mut b, 2), Err(SingularMatrix));
    }

    #[test]
    fn derivatives_flow_through_linear_solve() {
        // Solve A(t) y = b(t) with A = [[2+t, 1], [1, 3]], b = [sin t, t], and
        // compare dy/dt with central finite differences.
        let solve_for = |t: f64| -> [f64; 2] {
            let mut a = [[2.0 + t, 1.0], [1.0, 3.0]];
            let mut b = [t.sin(), t];
            solve_dense(&mut a, &mut b, 2).unwrap();
            b
        };
        let t0 = 0.4;
        let d = Dual::<1>::variable(t0, 0);
        let mut a = [
            [Dual::constant(2.0) + d, Dual::constant(1.0)],
            [Dual::constant(1.0), Dual::constant(3.0)],
        ];
        let mut b = [d.sin(), d];
        solve_dense(&mut a, &mut b, 2).unwrap();
        let h = 1.0e-6;
        let (yp, ym) = (solve_for(t0 + h), solve_for(t0 - h));
        for i in 0..2 {
            let fd = (yp[i] - ym[i]) / (2.0 * h);
            assert_relative_eq!(b[i].eps[0], fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn leading_block_solve_ignores_trailing_entries() {
        let mut a = [
            [2.0, 0.0, 777.0],
            [0.0, 4.0, 777.0],
            [777.0, 777.0, 777.0],
        ];
        let mut b = [2.0, 8.0, 777.0];
        solve_dense(&mut a, &mut b, 2).unwrap();
        assert_relative_eq!(b[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(b[1], 2.0, epsilon = 1e-14);
        assert_eq!(b[2], 777.0);
    }
}
