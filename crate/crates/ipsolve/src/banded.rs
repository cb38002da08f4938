//! Symmetric banded `LDL^T` factorization without pivoting.
//!
//! Interior-point KKT matrices become symmetric quasi-definite once the
//! Hessian block carries a positive shift and the constraint block a negative
//! one. Quasi-definite matrices admit an `LDL^T` factorization under any
//! symmetric permutation (Vanderbei), so no pivoting is needed and the band
//! never grows. The diagonal signs of `D` give the inertia, which the solver
//! uses to decide whether the current regularization is sufficient.

/// Symmetric matrix stored by diagonals: `band[d][j] = A[j + d][j]` for
/// `d = 0..=bandwidth`. Entries beyond the band are structurally zero.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

/// Outcome of a factorization attempt.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Factorization {
    /// All pivots were acceptably far from zero.
    Stable { positive: usize, negative: usize },
    /// A pivot fell below the breakdown threshold at the given column.
    Breakdown { column: usize },
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        let bw = bw.min(n.saturating_sub(1));
        BandMatrix {
            n,
            bw,
            band: vec![0.0; (bw + 1) * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn reset(&mut self) {
        self.band.fill(0.0);
    }

    #[inline]
    fn idx(&self, d: usize, j: usize) -> usize {
        d * self.n + j
    }

    /// Accumulates `A[i][j] += v` (symmetric; only one triangle is stored).
    /// Panics if `(i, j)` lies outside the band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        assert!(d <= self.bw, "entry ({i}, {j}) outside bandwidth {}", self.bw);
        let at = self.idx(d, lo);
        self.band[at] += v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        if d > self.bw {
            return 0.0;
        }
        self.band[self.idx(d, lo)]
    }

    /// Symmetric diagonal equilibration: rescales the matrix in place to
    /// `D A D` with `D_j = 1 / sqrt(|A_jj|)` (clamped away from zero and
    /// overflow), returning the scale vector. Congruence preserves inertia,
    /// while the rescaling compresses the many orders of magnitude an
    /// interior-point diagonal spans, so that elimination and pivot floors
    /// compare like with like. Solve `A x = b` afterwards as
    /// `x = D ldlt_solve(D b)`.
    pub fn equilibrate(&mut self) -> Vec<f64> {
        let n = self.n;
        let mut d = vec![1.0; n];
        for (j, dj) in d.iter_mut().enumerate() {
            let a = self.band[self.idx(0, j)].abs();
            *dj = 1.0 / a.clamp(1.0e-8, 1.0e16).sqrt();
        }
        for dd in 0..=self.bw {
            for j in 0..(n - dd) {
                let at = self.idx(dd, j);
                self.band[at] *= d[j + dd] * d[j];
            }
        }
        d
    }

    /// Factors the matrix in place as `L D L^T`. `L` is unit lower triangular
    /// with the same band, `D` diagonal. A pivot counts as breakdown when its
    /// magnitude falls below `pivot_tol * max(1, |input diagonal|)` for its
    /// own column; interior-point systems mix diagonal scales across many
    /// orders of magnitude, so a global floor would reject healthy columns.
    pub fn ldlt_in_place(&mut self, pivot_tol: f64) -> Factorization {
        let n = self.n;
        let bw = self.bw;
        let floors: Vec<f64> = (0..n)
            .map(|j| pivot_tol * self.band[j].abs().max(1.0))
            .collect();
        let (mut pos, mut neg) = (0usize, 0usize);
        for j in 0..n {
            // d_j = A[j][j] - sum_k L[j][k]^2 d_k over k in the band window.
            let k0 = j.saturating_sub(bw);
            let mut dj = self.band[self.idx(0, j)];
            for k in k0..j {
                let ljk = self.band[self.idx(j - k, k)];
                let dk = self.band[self.idx(0, k)];
                dj -= ljk * ljk * dk;
            }
            if dj.abs() < floors[j] || !dj.is_finite() {
                return Factorization::Breakdown { column: j };
            }
            if dj > 0.0 {
                pos += 1;
            } else {
                neg += 1;
            }
            let at = self.idx(0, j);
            self.band[at] = dj;
            let imax = (j + bw).min(n - 1);
            for i in (j + 1)..=imax {
                let mut lij = self.band[self.idx(i - j, j)];
                let k0 = i.saturating_sub(bw).max(k0);
                for k in k0..j {
                    let lik = self.band[self.idx(i - k, k)];
                    let ljk = self.band[self.idx(j - k, k)];
                    let dk = self.band[self.idx(0, k)];
                    lij -= lik * ljk * dk;
                }
                let at = self.idx(i - j, j);
                self.band[at] = lij / dj;
            }
        }
        Factorization::Stable {
            positive: pos,
            negative: neg,
        }
    }

    /// Solves `A x = b` in place using a completed factorization.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let bw = self.bw;
        assert_eq!(b.len(), n);
        // Forward: L y = b.
        for j in 0..n {
            let bj = b[j];
            if bj != 0.0 {
                let imax = (j + bw).min(n - 1);
                for i in (j + 1)..=imax {
                    b[i] -= self.band[self.idx(i - j, j)] * bj;
                }
            }
        }
        // Diagonal: D z = y.
        for j in 0..n {
            b[j] /= self.band[self.idx(0, j)];
        }
        // Backward: L^T x = z.
        for j in (0..n).rev() {
            let imax = (j + bw).min(n - 1);
            let mut acc = b[j];
            for i in (j + 1)..=imax {
                acc -= self.band[self.idx(i - j, j)] * b[i];
            }
            b[j] = acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_mul(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter()
            .map(|row| row.iter().zip(x).map(|(r, v)| r * v).sum())
            .collect()
    }

    #[test]
    fn factors_and_solves_spd_band() {
        // Tridiagonal SPD matrix: 2 on the diagonal, -1 off.
        let n = 12;
        let mut m = BandMatrix::zeros(n, 1);
        for j in 0..n {
            m.add(j, j, 2.0);
            if j + 1 < n {
                m.add(j + 1, j, -1.0);
            }
        }
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                dense[i][j] = m.get(i, j);
            }
        }
        let fact = m.ldlt_in_place(1e-14);
        assert_eq!(
            fact,
            Factorization::Stable {
                positive: n,
                negative: 0
            }
        );
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut x = b.clone();
        m.solve_in_place(&mut x);
        let r = dense_mul(&dense, &x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-10, "residual {}", ri - bi);
        }
    }

    #[test]
    fn reports_indefinite_inertia() {
        // Saddle matrix [[I, A^T], [A, -d I]] has one negative pivot per
        // constraint row once ordered constraint-last inside the band.
        let mut m = BandMatrix::zeros(3, 2);
        m.add(0, 0, 1.0);
        m.add(1, 1, 1.0);
        m.add(2, 0, 1.0);
        m.add(2, 1, 1.0);
        m.add(2, 2, -1e-8);
        let fact = m.ldlt_in_place(1e-14);
        assert_eq!(
            fact,
            Factorization::Stable {
                positive: 2,
                negative: 1
            }
        );
    }

    #[test]
    fn breakdown_on_zero_pivot() {
        let mut m = BandMatrix::zeros(2, 1);
        m.add(0, 0, 0.0);
        m.add(1, 0, 1.0);
        m.add(1, 1, 1.0);
        match m.ldlt_in_place(1e-12) {
            Factorization::Breakdown { column } => assert_eq!(column, 0),
            other => panic!("expected breakdown, got {other:?}"),
        }
    }

    #[test]
    fn full_bandwidth_degrades_to_dense() {
        let n = 5;
        let mut m = BandMatrix::zeros(n, n - 1);
        // Random-ish SPD: A = B^T B + I with B fixed.
        let b: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| ((i * 7 + j * 3) % 5) as f64 * 0.2 - 0.4).collect())
            .collect();
        for i in 0..n {
            for j in 0..=i {
                let mut v = if i == j { 1.0 } else { 0.0 };
                for k in 0..n {
                    v += b[k][i] * b[k][j];
                }
                m.add(i, j, v);
            }
        }
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                dense[i][j] = m.get(i, j);
            }
        }
        assert!(matches!(m.ldlt_in_place(1e-14), Factorization::Stable { .. }));
        let rhs = vec![1.0, -2.0, 0.5, 3.0, -1.0];
        let mut x = rhs.clone();
        m.solve_in_place(&mut x);
        let r = dense_mul(&dense, &x);
        for (ri, bi) in r.iter().zip(&rhs) {
            assert!((ri - bi).abs() < 1e-9);
        }
    }
}
