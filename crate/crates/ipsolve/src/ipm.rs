//! Primal-dual interior-point iteration with a filter line search.
//!
//! The solver handles programs of the form
//!
//! ```txt
//! minimize   f(z)
//! subject to cE(z)  = 0
//!            cI(z) <= 0        (slacked internally: cI(z) + s = 0, s > 0)
//!            l <= z <= u       (log barrier on finite bounds)
//! ```
//!
//! Search directions come from the condensed symmetric system
//!
//! ```txt
//! [ W + Sigma + delta_x I   JE^T      ] [dz]   [rhs_z]
//! [ JE                      -delta_c I] [dy] = [-cE  ]
//! ```
//!
//! where `Sigma` collects the barrier and slack-elimination terms. The system
//! is permuted with reverse Cuthill-McKee and factored as banded `LDL^T`;
//! the inertia of `D` decides whether `delta_x` must grow. Steps are accepted
//! by a two-entry filter on (constraint violation, barrier objective) with an
//! Armijo test on descent steps. If the line search collapses, a damped
//! Gauss-Newton restoration phase pulls the iterate back toward feasibility.

use crate::banded::{BandMatrix, Factorization};
use crate::order::{permuted_bandwidth, reverse_cuthill_mckee};
use crate::problem::{Nlp, WarmStart};
use log::{debug, trace};

#[derive(Clone, Debug)]
pub struct IpmOptions {
    /// Scaled KKT error required for convergence.
    pub tol: f64,
    /// Unscaled constraint violation required for convergence.
    pub tol_feas: f64,
    pub mu_init: f64,
    pub max_iter: usize,
    /// Initial value of the inertia-correction shift once a first correction
    /// is needed.
    pub reg_init: f64,
    pub reg_max: f64,
    /// Constant dual regularization keeping the KKT matrix quasi-definite.
    pub dual_reg: f64,
    /// Fraction of the way to a bound the starting point is pushed inward.
    pub bound_push: f64,
    /// Gradient-based objective and constraint row scaling.
    pub scale_problem: bool,
    pub pivot_tol: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions {
            tol: 1e-6,
            tol_feas: 1e-8,
            mu_init: 1e-1,
            max_iter: 600,
            reg_init: 1e-8,
            reg_max: 1e13,
            dual_reg: 1e-8,
            bound_push: 1e-2,
            scale_problem: true,
            pivot_tol: 1e-13,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IpmStatus {
    Converged,
    MaxIterations,
    /// Restoration could not reduce the constraint violation.
    Infeasible,
    /// The iterate or multipliers grew without bound.
    Diverged,
    /// The KKT system could not be factored even at maximum regularization.
    LinearSolverFailure,
}

#[derive(Clone, Debug)]
pub struct IpmSolution {
    pub status: IpmStatus,
    pub z: Vec<f64>,
    pub y_eq: Vec<f64>,
    pub y_ineq: Vec<f64>,
    pub slacks: Vec<f64>,
    pub objective: f64,
    /// Unscaled max constraint violation.
    pub primal_infeasibility: f64,
    /// Scaled dual infeasibility.
    pub dual_infeasibility: f64,
    pub complementarity: f64,
    pub iterations: usize,
    pub mu: f64,
}

// Filter line-search constants (standard values).
const GAMMA_THETA: f64 = 1e-5;
const GAMMA_PHI: f64 = 1e-8;
const S_THETA: f64 = 1.1;
const S_PHI: f64 = 2.3;
const DELTA_SWITCH: f64 = 1.0;
const ETA_PHI: f64 = 1e-8;
const GAMMA_ALPHA: f64 = 0.05;
const KAPPA_MU: f64 = 0.2;
const THETA_MU: f64 = 1.5;
const TAU_MIN: f64 = 0.99;
const KAPPA_EPS: f64 = 10.0;
const KAPPA_SIGMA: f64 = 1e10;
const MAX_BACKTRACKS: usize = 40;
const S_MAX: f64 = 100.0;
// Ceiling on the primal-dual coefficients `w/s` and `z/(x-bound)` used when
// assembling the condensed KKT matrix. A crushed slack can push these past
// 1e20, and the cancellation noise of such entries corrupts the factorization
// at every reachable regularization. Capping the coefficient is equivalent to
// linearizing the complementarity rows with a slightly smaller coefficient;
// the residuals stay exact, so the step direction degrades only on rows that
// are many orders tighter than the rest of the system.
const SIGMA_CAP: f64 = 1e12;

pub fn solve<N: Nlp + ?Sized>(nlp: &N, opts: &IpmOptions, warm: Option<&WarmStart>) -> IpmSolution {
    Solver::new(nlp, opts.clone(), warm).run()
}

struct Solver<'a, N: Nlp + ?Sized> {
    nlp: &'a N,
    o: IpmOptions,
    n: usize,
    me: usize,
    mi: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,

    obj_scale: f64,
    eq_scale: Vec<f64>,
    ineq_scale: Vec<f64>,

    je_pat: Vec<(usize, usize)>,
    ji_pat: Vec<(usize, usize)>,
    h_pat: Vec<(usize, usize)>,
    /// Per inequality row: indices into `ji_pat`/`ji_vals`.
    ji_by_row: Vec<Vec<usize>>,

    perm: Vec<usize>,
    kkt: BandMatrix,
    /// Equilibration scales of the current factorization (permuted order).
    kkt_scale: Vec<f64>,

    // Current iterate.
    z: Vec<f64>,
    s: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
    mu: f64,
    tau: f64,

    // Evaluations at the current iterate (scaled).
    f: f64,
    grad: Vec<f64>,
    ce: Vec<f64>,
    ci: Vec<f64>,
    je_vals: Vec<f64>,
    ji_vals: Vec<f64>,
    h_vals: Vec<f64>,

    filter: Vec<(f64, f64)>,
    theta_max: f64,
    delta_last: f64,

    // Restoration workspace, allocated on first use.
    resto: Option<RestoWorkspace>,
}

struct RestoWorkspace {
    perm: Vec<usize>,
    mat: BandMatrix,
}

impl<'a, N: Nlp + ?Sized> Solver<'a, N> {
    fn new(nlp: &'a N, o: IpmOptions, warm: Option<&WarmStart>) -> Self {
        let n = nlp.num_vars();
        let me = nlp.num_eq();
        let mi = nlp.num_ineq();
        let mut lower = vec![f64::NEG_INFINITY; n];
        let mut upper = vec![f64::INFINITY; n];
        nlp.bounds(&mut lower, &mut upper);

        let mut z = vec![0.0; n];
        if let Some(ws) = warm {
            z.copy_from_slice(&ws.z);
        } else {
            nlp.initial_point(&mut z);
        }
        // Push the starting point strictly inside its bounds.
        for j in 0..n {
            let (l, u) = (lower[j], upper[j]);
            assert!(l < u, "variable {j} has an empty or fixed bound interval");
            let pl = if l.is_finite() {
                let gap = if u.is_finite() { (u - l).min(1.0) } else { 1.0 };
                l + o.bound_push * gap.max(l.abs().min(1.0) * o.bound_push)
            } else {
                f64::NEG_INFINITY
            };
            let pu = if u.is_finite() {
                let gap = if l.is_finite() { (u - l).min(1.0) } else { 1.0 };
                u - o.bound_push * gap.max(u.abs().min(1.0) * o.bound_push)
            } else {
                f64::INFINITY
            };
            z[j] = z[j].max(pl).min(pu);
        }

        let je_pat = nlp.eq_jacobian_structure();
        let ji_pat = nlp.ineq_jacobian_structure();
        let h_pat = nlp.hessian_structure();
        let mut ji_by_row: Vec<Vec<usize>> = vec![Vec::new(); mi];
        for (k, &(r, _)) in ji_pat.iter().enumerate() {
            ji_by_row[r].push(k);
        }

        // KKT pattern: Hessian couplings, condensed JI^T D JI couplings and
        // the equality Jacobian border.
        let kkt_edges = |solver: &Self| {
            let mut edges: Vec<(usize, usize)> = Vec::new();
            edges.extend(solver.h_pat.iter().copied());
            for row in &solver.ji_by_row {
                for (a, &ka) in row.iter().enumerate() {
                    let ca = solver.ji_pat[ka].1;
                    for &kb in row.iter().skip(a + 1) {
                        let cb = solver.ji_pat[kb].1;
                        edges.push((ca.max(cb), ca.min(cb)));
                    }
                }
            }
            for &(r, c) in &solver.je_pat {
                edges.push((solver.n + r, c));
            }
            edges
        };

        let mut solver = Solver {
            nlp,
            o,
            n,
            me,
            mi,
            lower,
            upper,
            obj_scale: 1.0,
            eq_scale: vec![1.0; me],
            ineq_scale: vec![1.0; mi],
            je_pat,
            ji_pat,
            h_pat,
            ji_by_row,
            perm: Vec::new(),
            kkt: BandMatrix::zeros(0, 0),
            kkt_scale: Vec::new(),
            z,
            s: vec![1.0; mi],
            y: vec![0.0; me],
            w: vec![1.0; mi],
            zl: vec![1.0; n],
            zu: vec![1.0; n],
            mu: 0.0,
            tau: TAU_MIN,
            f: 0.0,
            grad: vec![0.0; n],
            ce: vec![0.0; me],
            ci: vec![0.0; mi],
            je_vals: vec![0.0; 0],
            ji_vals: vec![0.0; 0],
            h_vals: vec![0.0; 0],
            filter: Vec::new(),
            theta_max: f64::INFINITY,
            delta_last: 0.0,
            resto: None,
        };
        solver.je_vals = vec![0.0; solver.je_pat.len()];
        solver.ji_vals = vec![0.0; solver.ji_pat.len()];
        solver.h_vals = vec![0.0; solver.h_pat.len()];
        solver.mu = solver.o.mu_init;
        solver.tau = TAU_MIN.max(1.0 - solver.mu);

        let edges = kkt_edges(&solver);
        let nk = solver.n + solver.me;
        solver.perm = reverse_cuthill_mckee(nk, edges.iter().copied());
        let bw = permuted_bandwidth(&solver.perm, edges.iter().copied());
        solver.kkt = BandMatrix::zeros(nk, bw);

        // Gradient-based scaling, computed once at the starting point.
        if solver.o.scale_problem {
            solver.compute_scaling();
        }

        solver.evaluate_all();
        solver.init_slacks_and_duals(warm);
        solver
    }

    fn compute_scaling(&mut self) {
        let gmax = 100.0;
        let mut g = vec![0.0; self.n];
        self.nlp.gradient(&self.z, &mut g);
        let gnorm = g.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
        self.obj_scale = if gnorm > gmax { gmax / gnorm } else { 1.0 };

        let mut je = vec![0.0; self.je_pat.len()];
        self.nlp.eq_jacobian_values(&self.z, &mut je);
        let mut rmax = vec![0.0_f64; self.me];
        for (k, &(r, _)) in self.je_pat.iter().enumerate() {
            rmax[r] = rmax[r].max(je[k].abs());
        }
        for r in 0..self.me {
            self.eq_scale[r] = if rmax[r] > gmax { gmax / rmax[r] } else { 1.0 };
        }

        let mut ji = vec![0.0; self.ji_pat.len()];
        self.nlp.ineq_jacobian_values(&self.z, &mut ji);
        let mut rmax = vec![0.0_f64; self.mi];
        for (k, &(r, _)) in self.ji_pat.iter().enumerate() {
            rmax[r] = rmax[r].max(ji[k].abs());
        }
        for r in 0..self.mi {
            self.ineq_scale[r] = if rmax[r] > gmax { gmax / rmax[r] } else { 1.0 };
        }
    }

    /// Evaluates objective, constraints and first derivatives at `self.z`,
    /// applying the problem scaling.
    fn evaluate_all(&mut self) {
        self.f = self.nlp.objective(&self.z) * self.obj_scale;
        self.nlp.gradient(&self.z, &mut self.grad);
        for v in self.grad.iter_mut() {
            *v *= self.obj_scale;
        }
        self.nlp.eq_constraints(&self.z, &mut self.ce);
        for (v, sc) in self.ce.iter_mut().zip(&self.eq_scale) {
            *v *= sc;
        }
        self.nlp.ineq_constraints(&self.z, &mut self.ci);
        for (v, sc) in self.ci.iter_mut().zip(&self.ineq_scale) {
            *v *= sc;
        }
        self.nlp.eq_jacobian_values(&self.z, &mut self.je_vals);
        for (k, &(r, _)) in self.je_pat.iter().enumerate() {
            self.je_vals[k] *= self.eq_scale[r];
        }
        self.nlp.ineq_jacobian_values(&self.z, &mut self.ji_vals);
        for (k, &(r, _)) in self.ji_pat.iter().enumerate() {
            self.ji_vals[k] *= self.ineq_scale[r];
        }
    }

    fn init_slacks_and_duals(&mut self, warm: Option<&WarmStart>) {
        for i in 0..self.mi {
            let c = self.ci[i];
            self.s[i] = (-c).max(self.o.bound_push * c.abs().max(1.0));
        }
        if let Some(ws) = warm {
            if ws.y_eq.len() == self.me {
                for (yi, &v) in self.y.iter_mut().zip(&ws.y_eq) {
                    *yi = v;
                }
                // Multipliers seen by the solver live in scaled space.
                for r in 0..self.me {
                    self.y[r] *= self.obj_scale / self.eq_scale[r];
                }
            }
            if ws.y_ineq.len() == self.mi {
                for r in 0..self.mi {
                    self.w[r] = (ws.y_ineq[r] * self.obj_scale / self.ineq_scale[r]).max(1e-8);
                }
            }
        }
        for j in 0..self.n {
            self.zl[j] = if self.lower[j].is_finite() { 1.0 } else { 0.0 };
            self.zu[j] = if self.upper[j].is_finite() { 1.0 } else { 0.0 };
        }
    }

    fn theta(ce: &[f64], ci: &[f64], s: &[f64]) -> f64 {
        let mut t = 0.0;
        for v in ce {
            t += v.abs();
        }
        for (c, si) in ci.iter().zip(s) {
            t += (c + si).abs();
        }
        t
    }

    /// Barrier objective at the given evaluation. Returns `None` when a log
    /// argument is non-positive (point outside the open feasible region).
    fn barrier(&self, f: f64, z: &[f64], s: &[f64]) -> Option<f64> {
        let mut phi = f;
        for si in s {
            if *si <= 0.0 {
                return None;
            }
            phi -= self.mu * si.ln();
        }
        for j in 0..self.n {
            if self.lower[j].is_finite() {
                let d = z[j] - self.lower[j];
                if d <= 0.0 {
                    return None;
                }
                phi -= self.mu * d.ln();
            }
            if self.upper[j].is_finite() {
                let d = self.upper[j] - z[j];
                if d <= 0.0 {
                    return None;
                }
                phi -= self.mu * d.ln();
            }
        }
        Some(phi)
    }

    /// Scaled KKT error terms: (dual, primal-scaled, complementarity(mu)).
    fn kkt_error(&self, mu: f64) -> (f64, f64, f64) {
        let mut rz = self.grad.clone();
        for (k, &(r, c)) in self.je_pat.iter().enumerate() {
            rz[c] += self.je_vals[k] * self.y[r];
        }
        for (k, &(r, c)) in self.ji_pat.iter().enumerate() {
            rz[c] += self.ji_vals[k] * self.w[r];
        }
        for j in 0..self.n {
            rz[j] -= self.zl[j];
            rz[j] += self.zu[j];
        }
        let mut mult_sum = 0.0;
        let mut mult_cnt = 0usize;
        for v in self.y.iter().chain(&self.w).chain(&self.zl).chain(&self.zu) {
            mult_sum += v.abs();
            mult_cnt += 1;
        }
        let sd = ((mult_sum / mult_cnt.max(1) as f64).max(S_MAX)) / S_MAX;
        let sc = {
            let mut sum = 0.0;
            let mut cnt = 0usize;
            for v in self.w.iter().chain(&self.zl).chain(&self.zu) {
                sum += v.abs();
                cnt += 1;
            }
            ((sum / cnt.max(1) as f64).max(S_MAX)) / S_MAX
        };
        let dual = rz.iter().fold(0.0_f64, |a, &v| a.max(v.abs())) / sd;

        let mut primal = 0.0_f64;
        for v in &self.ce {
            primal = primal.max(v.abs());
        }
        for (c, si) in self.ci.iter().zip(&self.s) {
            primal = primal.max((c + si).abs());
        }

        let mut comp = 0.0_f64;
        for (si, wi) in self.s.iter().zip(&self.w) {
            comp = comp.max((si * wi - mu).abs());
        }
        for j in 0..self.n {
            if self.lower[j].is_finite() {
                comp = comp.max(((self.z[j] - self.lower[j]) * self.zl[j] - mu).abs());
            }
            if self.upper[j].is_finite() {
                comp = comp.max(((self.upper[j] - self.z[j]) * self.zu[j] - mu).abs());
            }
        }
        (dual, primal, comp / sc)
    }

    /// Unscaled max constraint violation (for the convergence test and
    /// reporting).
    fn primal_infeasibility_unscaled(&self) -> f64 {
        let mut p = 0.0_f64;
        for (v, sc) in self.ce.iter().zip(&self.eq_scale) {
            p = p.max((v / sc).abs());
        }
        for (v, sc) in self.ci.iter().zip(&self.ineq_scale) {
            p = p.max((v / sc).max(0.0));
        }
        p
    }

    /// Assembles and factors the condensed KKT matrix, correcting inertia by
    /// growing `delta_x` as needed. Returns the accepted shift or `None`.
    fn factor(&mut self) -> Option<f64> {
        self.nlp.hessian_values(
            &self.z,
            self.obj_scale,
            &self.scaled_eq_multipliers(),
            &self.scaled_ineq_multipliers(),
            &mut self.h_vals,
        );
        let mut delta = 0.0;
        let mut outcome = None;
        for _attempt in 0..40 {
            self.assemble_kkt(delta);
            self.kkt_scale = self.kkt.equilibrate();
            let result = self.kkt.ldlt_in_place(self.o.pivot_tol);
            match result {
                Factorization::Stable { positive, negative }
                    if positive == self.n && negative == self.me =>
                {
                    if delta > 0.0 {
                        self.delta_last = delta;
                    }
                    return Some(delta);
                }
                _ => {
                    outcome = Some((delta, result));
                    delta = if delta == 0.0 {
                        if self.delta_last == 0.0 {
                            self.o.reg_init
                        } else {
                            (self.delta_last / 3.0).max(self.o.reg_init)
                        }
                    } else {
                        delta * 8.0
                    };
                    if delta > self.o.reg_max {
                        self.log_factor_failure(outcome);
                        return None;
                    }
                }
            }
        }
        self.log_factor_failure(outcome);
        None
    }

    /// Post-mortem context when the KKT system cannot be factored: the last
    /// attempt's outcome plus scale and finiteness of everything feeding the
    /// assembly.
    fn log_factor_failure(&self, outcome: Option<(f64, Factorization)>) {
        let amax = |v: &[f64]| v.iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
        let bad = |v: &[f64]| v.iter().filter(|x| !x.is_finite()).count();
        let ws_max = self
            .w
            .iter()
            .zip(&self.s)
            .fold(0.0_f64, |a, (&w, &s)| a.max((w / s).abs()));
        debug!(
            "KKT factorization failed at {:?}: |H| {:.2e} (bad {}), |JE| {:.2e} (bad {}), |JI| {:.2e} (bad {}), max w/s {:.2e}, max sigma {:.2e}, mu {:.2e}",
            outcome,
            amax(&self.h_vals),
            bad(&self.h_vals),
            amax(&self.je_vals),
            bad(&self.je_vals),
            amax(&self.ji_vals),
            bad(&self.ji_vals),
            ws_max,
            amax(&self.sigma_diag()),
            self.mu,
        );
    }

    fn scaled_eq_multipliers(&self) -> Vec<f64> {
        // The Hessian callback works with unscaled constraints; fold the row
        // scaling into the multipliers it receives.
        self.y
            .iter()
            .zip(&self.eq_scale)
            .map(|(y, sc)| y * sc)
            .collect()
    }

    fn scaled_ineq_multipliers(&self) -> Vec<f64> {
        self.w
            .iter()
            .zip(&self.ineq_scale)
            .map(|(w, sc)| w * sc)
            .collect()
    }

    fn sigma_diag(&self) -> Vec<f64> {
        let mut sig = vec![0.0; self.n];
        for j in 0..self.n {
            if self.lower[j].is_finite() {
                sig[j] += self.lower_coeff(j);
            }
            if self.upper[j].is_finite() {
                sig[j] += self.upper_coeff(j);
            }
        }
        sig
    }

    // Complementarity linearization coefficients, shared between the KKT
    // assembly and the slack/dual step recovery so the computed direction
    // solves one consistent system even where the cap is active.
    fn ineq_coeff(&self, r: usize) -> f64 {
        (self.w[r] / self.s[r]).min(SIGMA_CAP)
    }

    fn lower_coeff(&self, j: usize) -> f64 {
        (self.zl[j] / (self.z[j] - self.lower[j])).min(SIGMA_CAP)
    }

    fn upper_coeff(&self, j: usize) -> f64 {
        (self.zu[j] / (self.upper[j] - self.z[j])).min(SIGMA_CAP)
    }

    fn assemble_kkt(&mut self, delta: f64) {
        self.kkt.reset();
        let perm = &self.perm;
        for (k, &(i, j)) in self.h_pat.iter().enumerate() {
            self.kkt.add(perm[i], perm[j], self.h_vals[k]);
        }
        let sigma = self.sigma_diag();
        for j in 0..self.n {
            self.kkt.add(perm[j], perm[j], sigma[j] + delta);
        }
        // Condensed slack block: JI^T diag(w/s) JI, one unordered pair at a
        // time (duplicate columns inside a row fold into the diagonal twice).
        for (r, row) in self.ji_by_row.iter().enumerate() {
            let d = self.ineq_coeff(r);
            for (a, &ka) in row.iter().enumerate() {
                let (_, ca) = self.ji_pat[ka];
                let va = self.ji_vals[ka];
                self.kkt.add(perm[ca], perm[ca], d * va * va);
                for &kb in row.iter().take(a) {
                    let (_, cb) = self.ji_pat[kb];
                    let vb = self.ji_vals[kb];
                    let twice = if ca == cb { 2.0 } else { 1.0 };
                    self.kkt.add(perm[ca], perm[cb], twice * d * va * vb);
                }
            }
        }
        for (k, &(r, c)) in self.je_pat.iter().enumerate() {
            self.kkt.add(perm[self.n + r], perm[c], self.je_vals[k]);
        }
        let dual_reg = self.o.dual_reg.max(delta * 1e-8);
        for r in 0..self.me {
            self.kkt.add(perm[self.n + r], perm[self.n + r], -dual_reg);
        }
    }

    /// Builds the condensed RHS and solves for (dz, dy).
    fn direction(&self) -> (Vec<f64>, Vec<f64>) {
        let mut rhs = vec![0.0; self.n + self.me];
        // -grad - JE^T y - JI^T (mu/s + D (ci + s)) + mu/(z-l) - mu/(u-z)
        for j in 0..self.n {
            let mut v = -self.grad[j];
            if self.lower[j].is_finite() {
                v += self.mu / (self.z[j] - self.lower[j]);
            }
            if self.upper[j].is_finite() {
                v -= self.mu / (self.upper[j] - self.z[j]);
            }
            rhs[j] = v;
        }
        for (k, &(r, c)) in self.je_pat.iter().enumerate() {
            rhs[c] -= self.je_vals[k] * self.y[r];
        }
        for (k, &(r, c)) in self.ji_pat.iter().enumerate() {
            let ri = self.ci[r] + self.s[r];
            let coeff = self.mu / self.s[r] + self.ineq_coeff(r) * ri;
            rhs[c] -= self.ji_vals[k] * coeff;
        }
        for r in 0..self.me {
            rhs[self.n + r] = -self.ce[r];
        }

        let mut permuted = vec![0.0; rhs.len()];
        for (i, &v) in rhs.iter().enumerate() {
            permuted[self.perm[i]] = v;
        }
        for (v, d) in permuted.iter_mut().zip(&self.kkt_scale) {
            *v *= d;
        }
        self.kkt.solve_in_place(&mut permuted);
        for (v, d) in permuted.iter_mut().zip(&self.kkt_scale) {
            *v *= d;
        }
        let mut dz = vec![0.0; self.n];
        let mut dy = vec![0.0; self.me];
        for j in 0..self.n {
            dz[j] = permuted[self.perm[j]];
        }
        for r in 0..self.me {
            dy[r] = permuted[self.perm[self.n + r]];
        }
        (dz, dy)
    }

    fn recover_steps(&self, dz: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut ds = vec![0.0; self.mi];
        for (k, &(r, c)) in self.ji_pat.iter().enumerate() {
            ds[r] += self.ji_vals[k] * dz[c];
        }
        for r in 0..self.mi {
            ds[r] = -(self.ci[r] + self.s[r]) - ds[r];
        }
        let mut dw = vec![0.0; self.mi];
        for r in 0..self.mi {
            dw[r] = self.mu / self.s[r] - self.w[r] - self.ineq_coeff(r) * ds[r];
        }
        let mut dzl = vec![0.0; self.n];
        let mut dzu = vec![0.0; self.n];
        for j in 0..self.n {
            if self.lower[j].is_finite() {
                let d = self.z[j] - self.lower[j];
                dzl[j] = self.mu / d - self.zl[j] - self.lower_coeff(j) * dz[j];
            }
            if self.upper[j].is_finite() {
                let d = self.upper[j] - self.z[j];
                dzu[j] = self.mu / d - self.zu[j] + self.upper_coeff(j) * dz[j];
            }
        }
        (ds, dw, dzl, dzu)
    }

    fn fraction_to_boundary(&self, dz: &[f64], ds: &[f64]) -> f64 {
        let mut alpha = 1.0_f64;
        for (si, di) in self.s.iter().zip(ds) {
            if *di < 0.0 {
                alpha = alpha.min(-self.tau * si / di);
            }
        }
        for j in 0..self.n {
            if dz[j] < 0.0 && self.lower[j].is_finite() {
                alpha = alpha.min(-self.tau * (self.z[j] - self.lower[j]) / dz[j]);
            }
            if dz[j] > 0.0 && self.upper[j].is_finite() {
                alpha = alpha.min(self.tau * (self.upper[j] - self.z[j]) / dz[j]);
            }
        }
        alpha.min(1.0)
    }

    fn dual_fraction_to_boundary(&self, dw: &[f64], dzl: &[f64], dzu: &[f64]) -> f64 {
        let mut alpha = 1.0_f64;
        for (wi, di) in self.w.iter().zip(dw) {
            if *di < 0.0 {
                alpha = alpha.min(-self.tau * wi / di);
            }
        }
        for j in 0..self.n {
            if self.lower[j].is_finite() && dzl[j] < 0.0 {
                alpha = alpha.min(-self.tau * self.zl[j] / dzl[j]);
            }
            if self.upper[j].is_finite() && dzu[j] < 0.0 {
                alpha = alpha.min(-self.tau * self.zu[j] / dzu[j]);
            }
        }
        alpha.min(1.0)
    }

    fn filter_accepts(&self, theta: f64, phi: f64) -> bool {
        if theta >= self.theta_max {
            return false;
        }
        for &(tf, pf) in &self.filter {
            if theta >= tf && phi >= pf {
                return false;
            }
        }
        true
    }

    fn run(mut self) -> IpmSolution {
        let mut iterations = 0usize;
        let mut status = IpmStatus::MaxIterations;
        let mut resto_rounds = 0usize;

        let theta0 = Self::theta(&self.ce, &self.ci, &self.s);
        self.theta_max = 1e4 * theta0.max(1.0);
        self.filter.clear();

        for iter in 0..self.o.max_iter {
            iterations = iter;

            // Convergence tests: overall first, then the barrier subproblem.
            let (dual, _primal_scaled, comp0) = self.kkt_error(0.0);
            let primal_unscaled = self.primal_infeasibility_unscaled();
            trace!(
                "it {iter}: mu={:.2e} f={:.6e} th={:.2e} dual={:.2e} pinf={:.2e} comp={:.2e}",
                self.mu,
                self.f / self.obj_scale,
                Self::theta(&self.ce, &self.ci, &self.s),
                dual,
                primal_unscaled,
                comp0
            );
            if dual <= self.o.tol && comp0 <= self.o.tol && primal_unscaled <= self.o.tol_feas {
                status = IpmStatus::Converged;
                break;
            }
            let (dual_mu, primal_mu, comp_mu) = self.kkt_error(self.mu);
            let mu_floor = (self.o.tol / 11.0).min(self.mu);
            if dual_mu.max(primal_mu).max(comp_mu) <= KAPPA_EPS * self.mu && self.mu > mu_floor {
                self.mu = mu_floor.max((KAPPA_MU * self.mu).min(self.mu.powf(THETA_MU)));
                self.tau = TAU_MIN.max(1.0 - self.mu);
                self.filter.clear();
                debug!("it {iter}: barrier parameter -> {:.3e}", self.mu);
            }

            let Some(delta) = self.factor() else {
                status = IpmStatus::LinearSolverFailure;
                break;
            };
            let (dz, dy) = self.direction();
            let (ds, dw, dzl, dzu) = self.recover_steps(&dz);

            let step_inf = dz.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
            let z_inf = self.z.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
            if !step_inf.is_finite() {
                status = IpmStatus::LinearSolverFailure;
                break;
            }
            if step_inf <= 1e-15 * z_inf.max(1.0) {
                // Direction numerically zero: tighten the barrier or stop.
                if self.mu > mu_floor {
                    self.mu = mu_floor.max(KAPPA_MU * self.mu);
                    self.tau = TAU_MIN.max(1.0 - self.mu);
                    self.filter.clear();
                    continue;
                }
                status = if primal_unscaled <= self.o.tol_feas && dual <= 1e2 * self.o.tol {
                    IpmStatus::Converged
                } else {
                    IpmStatus::MaxIterations
                };
                break;
            }

            let alpha_max = self.fraction_to_boundary(&dz, &ds);
            let alpha_dual = self.dual_fraction_to_boundary(&dw, &dzl, &dzu);

            let theta = Self::theta(&self.ce, &self.ci, &self.s);
            let phi = self
                .barrier(self.f, &self.z, &self.s)
                .expect("current iterate left the barrier domain");
            // Directional derivative of the barrier objective.
            let mut dphi = 0.0;
            for j in 0..self.n {
                let mut gj = self.grad[j];
                if self.lower[j].is_finite() {
                    gj -= self.mu / (self.z[j] - self.lower[j]);
                }
                if self.upper[j].is_finite() {
                    gj += self.mu / (self.upper[j] - self.z[j]);
                }
                dphi += gj * dz[j];
            }
            for (i, di) in ds.iter().enumerate() {
                dphi -= self.mu / self.s[i] * di;
            }

            let alpha_min = if dphi < 0.0 {
                GAMMA_ALPHA
                    * (GAMMA_THETA)
                        .min(GAMMA_PHI * theta / (-dphi))
                        .min(DELTA_SWITCH * theta.powf(S_THETA) / (-dphi).powf(S_PHI))
            } else {
                GAMMA_ALPHA * GAMMA_THETA
            }
            .min(1e-2)
            .max(1e-16);

            let mut alpha = alpha_max;
            let mut accepted = false;
            let mut f_type_step = false;
            let mut trial = TrialPoint::default();
            for _bt in 0..MAX_BACKTRACKS {
                if alpha < alpha_min {
                    break;
                }
                if let Some(t) = self.try_point(&dz, &ds, alpha) {
                    let switching = dphi < 0.0
                        && alpha * (-dphi).powf(S_PHI) > DELTA_SWITCH * theta.powf(S_THETA);
                    let armijo = t.phi <= phi + ETA_PHI * alpha * dphi;
                    let progress = t.theta <= (1.0 - GAMMA_THETA) * theta
                        || t.phi <= phi - GAMMA_PHI * theta;
                    if switching {
                        if armijo && self.filter_accepts(t.theta, t.phi) {
                            accepted = true;
                            f_type_step = true;
                            trial = t;
                            break;
                        }
                    } else if progress && self.filter_accepts(t.theta, t.phi) {
                        accepted = true;
                        trial = t;
                        break;
                    }
                }
                alpha *= 0.5;
            }

            if !accepted {
                // Try once more with a bumped Hessian shift before invoking
                // restoration; pure regularization often unsticks the filter.
                // The bump is capped well below `reg_max` so that repeated
                // restoration events cannot push the factorization's starting
                // shift past its search range.
                if delta < self.o.reg_max && resto_rounds == 0 && theta > self.o.tol_feas {
                    self.delta_last =
                        (self.delta_last.max(self.o.reg_init) * 100.0).min(1e-4 * self.o.reg_max);
                }
                debug!("it {iter}: line search failed (theta={theta:.3e}), restoration");
                resto_rounds += 1;
                if resto_rounds > 20 {
                    status = IpmStatus::Infeasible;
                    break;
                }
                if !self.restoration() {
                    status = IpmStatus::Infeasible;
                    break;
                }
                self.filter.clear();
                continue;
            }
            resto_rounds = 0;

            if !f_type_step {
                self.filter.push((
                    (1.0 - GAMMA_THETA) * theta,
                    phi - GAMMA_PHI * theta,
                ));
            }

            // Commit the step.
            self.z = trial.z;
            self.s = trial.s;
            self.f = trial.f;
            self.ce = trial.ce;
            self.ci = trial.ci;
            for r in 0..self.me {
                self.y[r] += alpha * dy[r];
            }
            for r in 0..self.mi {
                self.w[r] = (self.w[r] + alpha_dual * dw[r]).max(0.0);
            }
            for j in 0..self.n {
                self.zl[j] = (self.zl[j] + alpha_dual * dzl[j]).max(0.0);
                self.zu[j] = (self.zu[j] + alpha_dual * dzu[j]).max(0.0);
            }
            // Keep bound duals in a corridor around mu-centrality.
            for (i, si) in self.s.iter().enumerate() {
                let c = self.mu / si;
                self.w[i] = self.w[i].clamp(c / KAPPA_SIGMA, c * KAPPA_SIGMA).max(1e-16);
            }
            for j in 0..self.n {
                if self.lower[j].is_finite() {
                    let c = self.mu / (self.z[j] - self.lower[j]);
                    self.zl[j] = self.zl[j].clamp(c / KAPPA_SIGMA, c * KAPPA_SIGMA);
                }
                if self.upper[j].is_finite() {
                    let c = self.mu / (self.upper[j] - self.z[j]);
                    self.zu[j] = self.zu[j].clamp(c / KAPPA_SIGMA, c * KAPPA_SIGMA);
                }
            }
            self.nlp.eq_jacobian_values(&self.z, &mut self.je_vals);
            for (k, &(r, _)) in self.je_pat.iter().enumerate() {
                self.je_vals[k] *= self.eq_scale[r];
            }
            self.nlp.ineq_jacobian_values(&self.z, &mut self.ji_vals);
            for (k, &(r, _)) in self.ji_pat.iter().enumerate() {
                self.ji_vals[k] *= self.ineq_scale[r];
            }
            self.nlp.gradient(&self.z, &mut self.grad);
            for v in self.grad.iter_mut() {
                *v *= self.obj_scale;
            }

            let ynorm = self.y.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
            let znorm = self.z.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
            if !znorm.is_finite() || znorm > 1e14 || ynorm > 1e14 {
                status = IpmStatus::Diverged;
                break;
            }
        }

        if status == IpmStatus::MaxIterations {
            iterations = self.o.max_iter;
        }
        let (dual, _, comp) = self.kkt_error(0.0);
        let primal = self.primal_infeasibility_unscaled();
        // Report multipliers in the problem's own (unscaled) space.
        let y_eq: Vec<f64> = self
            .y
            .iter()
            .zip(&self.eq_scale)
            .map(|(y, sc)| y * sc / self.obj_scale)
            .collect();
        let y_ineq: Vec<f64> = self
            .w
            .iter()
            .zip(&self.ineq_scale)
            .map(|(w, sc)| w * sc / self.obj_scale)
            .collect();
        IpmSolution {
            status,
            objective: self.f / self.obj_scale,
            z: self.z,
            y_eq,
            y_ineq,
            slacks: self.s,
            primal_infeasibility: primal,
            dual_infeasibility: dual,
            complementarity: comp,
            iterations: iterations + 1,
            mu: self.mu,
        }
    }

    fn try_point(&self, dz: &[f64], ds: &[f64], alpha: f64) -> Option<TrialPoint> {
        let mut z = self.z.clone();
        for (zj, dj) in z.iter_mut().zip(dz) {
            *zj += alpha * dj;
        }
        let mut s = self.s.clone();
        for (sj, dj) in s.iter_mut().zip(ds) {
            *sj += alpha * dj;
        }
        let f = self.nlp.objective(&z) * self.obj_scale;
        if !f.is_finite() {
            return None;
        }
        let mut ce = vec![0.0; self.me];
        self.nlp.eq_constraints(&z, &mut ce);
        let mut ci = vec![0.0; self.mi];
        self.nlp.ineq_constraints(&z, &mut ci);
        for (v, sc) in ce.iter_mut().zip(&self.eq_scale) {
            *v *= sc;
        }
        for (v, sc) in ci.iter_mut().zip(&self.ineq_scale) {
            *v *= sc;
        }
        if ce.iter().chain(ci.iter()).any(|v| !v.is_finite()) {
            return None;
        }
        let theta = Self::theta(&ce, &ci, &s);
        let phi = self.barrier(f, &z, &s)?;
        Some(TrialPoint {
            z,
            s,
            f,
            ce,
            ci,
            theta,
            phi,
        })
    }

    /// Damped Gauss-Newton descent on the scaled constraint violation
    /// `0.5 (|cE|^2 + |max(cI, -s)+s|^2)`, ignoring the objective. Returns
    /// true when the violation was reduced enough to resume the main loop.
    fn restoration(&mut self) -> bool {
        let n = self.n;
        let m = self.me + self.mi;
        if self.resto.is_none() {
            let mut edges: Vec<(usize, usize)> = Vec::new();
            for &(r, c) in &self.je_pat {
                edges.push((n + r, c));
            }
            for &(r, c) in &self.ji_pat {
                edges.push((n + self.me + r, c));
            }
            let perm = reverse_cuthill_mckee(n + m, edges.iter().copied());
            let bw = permuted_bandwidth(&perm, edges.iter().copied());
            self.resto = Some(RestoWorkspace {
                mat: BandMatrix::zeros(n + m, bw),
                perm,
            });
        }

        let theta_enter = Self::theta(&self.ce, &self.ci, &self.s);
        let target = (0.02 * theta_enter).max(0.1 * self.o.tol_feas);
        let mut lambda = 1e-6;
        let mut theta_cur = theta_enter;

        for _ in 0..40 {
            // Residuals: equalities as-is; inequalities only where violated
            // (r = cI + s with s snapped to max(-cI, small)).
            for i in 0..self.mi {
                self.s[i] = (-self.ci[i]).max(1e-8);
            }
            let mut res = vec![0.0; self.me + self.mi];
            for (r, v) in self.ce.iter().enumerate() {
                res[r] = *v;
            }
            for (r, v) in self.ci.iter().enumerate() {
                res[self.me + r] = (v + self.s[r]).max(0.0);
            }
            theta_cur = res.iter().map(|v| v.abs()).sum();
            if theta_cur <= target {
                break;
            }

            let ws = self.resto.as_mut().unwrap();
            ws.mat.reset();
            for j in 0..n {
                ws.mat.add(ws.perm[j], ws.perm[j], lambda);
            }
            for (k, &(r, c)) in self.je_pat.iter().enumerate() {
                ws.mat.add(ws.perm[n + r], ws.perm[c], self.je_vals[k]);
            }
            for (k, &(r, c)) in self.ji_pat.iter().enumerate() {
                let active = res[self.me + r] > 0.0;
                let v = if active { self.ji_vals[k] } else { 0.0 };
                ws.mat.add(ws.perm[n + self.me + r], ws.perm[c], v);
            }
            for r in 0..m {
                ws.mat.add(ws.perm[n + r], ws.perm[n + r], -1.0);
            }
            if !matches!(ws.mat.ldlt_in_place(self.o.pivot_tol), Factorization::Stable { .. }) {
                lambda *= 10.0;
                continue;
            }
            let mut rhs = vec![0.0; n + m];
            for r in 0..m {
                rhs[ws.perm[n + r]] = -res[r];
            }
            ws.mat.solve_in_place(&mut rhs);
            let mut znew = self.z.clone();
            for j in 0..n {
                znew[j] += rhs[ws.perm[j]];
                // Stay strictly inside bounds.
                if self.lower[j].is_finite() {
                    znew[j] = znew[j].max(self.lower[j] + 1e-10);
                }
                if self.upper[j].is_finite() {
                    znew[j] = znew[j].min(self.upper[j] - 1e-10);
                }
            }
            let mut ce = vec![0.0; self.me];
            self.nlp.eq_constraints(&znew, &mut ce);
            for (v, sc) in ce.iter_mut().zip(&self.eq_scale) {
                *v *= sc;
            }
            let mut ci = vec![0.0; self.mi];
            self.nlp.ineq_constraints(&znew, &mut ci);
            for (v, sc) in ci.iter_mut().zip(&self.ineq_scale) {
                *v *= sc;
            }
            let mut theta_new = 0.0;
            for v in &ce {
                theta_new += v.abs();
            }
            for v in &ci {
                theta_new += v.max(0.0);
            }
            if theta_new < theta_cur && ce.iter().chain(ci.iter()).all(|v| v.is_finite()) {
                self.z = znew;
                self.ce = ce;
                self.ci = ci;
                self.evaluate_all();
                lambda = (lambda / 3.0).max(1e-10);
            } else {
                lambda *= 10.0;
                if lambda > 1e10 {
                    break;
                }
            }
        }

        // Leave with a consistent interior point.
        for i in 0..self.mi {
            self.s[i] = (-self.ci[i]).max(self.o.bound_push * self.ci[i].abs().max(1.0));
            self.w[i] = (self.mu / self.s[i]).clamp(1e-8, 1e8);
        }
        for j in 0..self.n {
            if self.lower[j].is_finite() {
                self.zl[j] = (self.mu / (self.z[j] - self.lower[j])).clamp(1e-8, 1e8);
            }
            if self.upper[j].is_finite() {
                self.zu[j] = (self.mu / (self.upper[j] - self.z[j])).clamp(1e-8, 1e8);
            }
        }
        theta_cur < theta_enter * 0.9 || theta_cur <= (0.02 * theta_enter).max(0.1 * self.o.tol_feas)
    }
}

#[derive(Default)]
struct TrialPoint {
    z: Vec<f64>,
    s: Vec<f64>,
    f: f64,
    ce: Vec<f64>,
    ci: Vec<f64>,
    theta: f64,
    phi: f64,
}
