//! Direct transcription of the hybrid optimal control problem.
//!
//! The horizon [0, T] is divided into `n` implicit-Euler steps of length
//! `delta = T / n`. Stage k (k = 1..n) carries the state at time k delta, the
//! motor-rate control held over the step, and one impulse variable per
//! engageable interface. The decision vector stacks, per stage,
//!
//! ```text
//! [ theta (2) | xi (4) | xi_dot (4) | u (2) | zeta (4) | pi (4) | nu (4) | gamma (4) ]
//! ```
//!
//! 28 entries. `zeta` is the torque impulse each interface transmits during
//! the step (units N m s; divide by `delta` for an average torque). `pi` and
//! `nu` split `zeta` into non-negative parts (`zeta = pi - nu`), and `gamma`
//! is a slack bounding the interface's relative speed.
//!
//! Two problem flavors share the layout:
//!
//! - **Free switching**: engagement is decided by the optimizer through
//!   relaxed complementarity. With `phi_i = Gamma_i xi_dot`, each stage
//!   enforces `gamma_i >= |phi_i|`, `(gamma_i + phi_i) pi_i <= eps`, and
//!   `(gamma_i - phi_i) nu_i <= eps`: an interface can only transmit impulse
//!   in a direction consistent with zero relative speed, up to the relaxation
//!   `eps`, which a homotopy in [`crate::solver`] drives toward zero.
//! - **Fixed schedule**: a given mode sequence replaces complementarity by
//!   per-step equalities (`phi_i = 0` where engaged, `zeta_i = 0` where not),
//!   turning the same discretization into a conventional multi-phase problem.
//!
//! The objective combines terminal launch speed, a smooth count of
//! engagement switches, and control effort.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Dual, Dual2, Real};
use crate::dynamics::{ee_speed_squared, eval_model, spring_torque};
use crate::modes::{
    engagement_indicator, extract_schedule, relative_speeds, ClutchPattern, ModeSchedule,
    ScheduleError, GAMMA, N_CONSTRAINTS,
};
use crate::params::{ParamError, PlantParams};
use crate::sim::{rollout, Method, SimError};
use crate::state::{split_state, HybridState, DIM_X, DIM_XI};

/// Decision variables per stage.
pub const STAGE_VARS: usize = 28;
/// Equality rows per stage: 10 dynamics defects plus 4 interface rows.
pub const EQ_PER_STAGE: usize = 14;
/// Inequality rows per stage with free switching: 16 complementarity rows
/// plus 4 deflection and 4 spring-torque limits.
pub const INEQ_PER_STAGE_FREE: usize = 24;
/// Inequality rows per stage under a fixed schedule: limits only.
pub const INEQ_PER_STAGE_FIXED: usize = 8;

const U_OFF: usize = 10;
const ZETA_OFF: usize = 12;
const PI_OFF: usize = 16;
const NU_OFF: usize = 20;
const GAMMA_OFF: usize = 24;

/// Index arithmetic for the stacked decision vector and constraint rows.
/// Stages are indexed 0-based here; stage `s` holds the state at time
/// `(s + 1) delta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
}

impl Layout {
    pub fn num_vars(&self) -> usize {
        self.n * STAGE_VARS
    }
    pub fn num_eq(&self) -> usize {
        self.n * EQ_PER_STAGE
    }
    pub fn stage(&self, s: usize) -> usize {
        s * STAGE_VARS
    }
    pub fn theta(&self, s: usize, j: usize) -> usize {
        self.stage(s) + j
    }
    pub fn xi(&self, s: usize, j: usize) -> usize {
        self.stage(s) + 2 + j
    }
    pub fn xi_dot(&self, s: usize, j: usize) -> usize {
        self.stage(s) + 6 + j
    }
    pub fn u(&self, s: usize, j: usize) -> usize {
        self.stage(s) + U_OFF + j
    }
    pub fn zeta(&self, s: usize, i: usize) -> usize {
        self.stage(s) + ZETA_OFF + i
    }
    pub fn pi(&self, s: usize, i: usize) -> usize {
        self.stage(s) + PI_OFF + i
    }
    pub fn nu(&self, s: usize, i: usize) -> usize {
        self.stage(s) + NU_OFF + i
    }
    pub fn gamma(&self, s: usize, i: usize) -> usize {
        self.stage(s) + GAMMA_OFF + i
    }
    pub fn defect_row(&self, s: usize, r: usize) -> usize {
        s * EQ_PER_STAGE + r
    }
    /// Interface equality row: the impulse split `zeta - pi + nu = 0` with
    /// free switching, or the per-mode pin under a fixed schedule.
    pub fn interface_row(&self, s: usize, i: usize) -> usize {
        s * EQ_PER_STAGE + 10 + i
    }
}

/// Discretization and objective settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TranscriptionConfig {
    /// Number of implicit-Euler steps.
    pub n: usize,
    /// Horizon length (s).
    pub t_final: f64,
    /// Weight on the terminal launch term (negative squared tip speed).
    pub w_launch: f64,
    /// Weight on the smooth switch count.
    pub w_switch: f64,
    /// Weight on squared motor-rate effort.
    pub w_effort: f64,
    /// Sharpness of the engagement indicator versus transmitted torque.
    pub alpha: f64,
    /// Sharpness of the switch detector on indicator sign changes.
    pub beta: f64,
    /// Bound on per-interface average torque |zeta| / delta.
    pub zeta_max: f64,
    /// Upper bound on the relative-speed slack gamma.
    pub gamma_max: f64,
    /// Initial state, fixed at time zero.
    pub x0: HybridState,
}

impl Default for TranscriptionConfig {
    fn default() -> Self {
        TranscriptionConfig {
            n: 100,
            t_final: 0.5,
            w_launch: 1.0,
            w_switch: 0.1,
            w_effort: 1.0e-3,
            alpha: 100.0,
            beta: 500.0,
            zeta_max: 50.0,
            gamma_max: 100.0,
            x0: HybridState::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TranscriptionError {
    #[error("need at least 2 steps for the switch objective, got {n}")]
    TooFewSteps { n: usize },
    #[error("{name} must be strictly positive and finite, got {value}")]
    NotPositive { name: &'static str, value: f64 },
    #[error("{name} must be non-negative and finite, got {value}")]
    NegativeWeight { name: &'static str, value: f64 },
    #[error("initial state violates {limit}: |{value}| > {bound}")]
    StartOutOfBounds { limit: &'static str, value: f64, bound: f64 },
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

impl TranscriptionConfig {
    pub fn delta(&self) -> f64 {
        self.t_final / self.n as f64
    }

    pub fn validate(&self, p: &PlantParams) -> Result<(), TranscriptionError> {
        if self.n < 2 {
            return Err(TranscriptionError::TooFewSteps { n: self.n });
        }
        for (name, value) in [
            ("t_final", self.t_final),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("zeta_max", self.zeta_max),
            ("gamma_max", self.gamma_max),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(TranscriptionError::NotPositive { name, value });
            }
        }
        for (name, value) in [
            ("w_launch", self.w_launch),
            ("w_switch", self.w_switch),
            ("w_effort", self.w_effort),
        ] {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(TranscriptionError::NegativeWeight { name, value });
            }
        }
        let x = self.x0.to_array();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(TranscriptionError::NotPositive { name: "x0", value: f64::NAN });
        }
        for j in 0..2 {
            let theta = self.x0.theta[j];
            if theta.abs() > p.theta_max {
                return Err(TranscriptionError::StartOutOfBounds {
                    limit: "motor position limit",
                    value: theta,
                    bound: p.theta_max,
                });
            }
            let defl = self.x0.deflection()[j];
            if defl.abs() > p.phi_max {
                return Err(TranscriptionError::StartOutOfBounds {
                    limit: "spring deflection limit",
                    value: defl,
                    bound: p.phi_max,
                });
            }
            let torque = p.k_spring[j] * defl;
            if torque.abs() > p.tau_s_max[j] {
                return Err(TranscriptionError::StartOutOfBounds {
                    limit: "spring torque limit",
                    value: torque,
                    bound: p.tau_s_max[j],
                });
            }
        }
        Ok(())
    }
}

/// Which switching structure the problem uses.
#[derive(Debug, Clone)]
pub enum Switching {
    /// Engagements decided by the optimizer via relaxed complementarity.
    Free,
    /// Engagements pinned per step from a schedule.
    Fixed(ModeSchedule),
}

// Local indices of the 26 inputs a stage defect reads: previous state,
// current state, control, impulses.
const L_PREV: usize = 0;
const L_CUR: usize = 10;
const L_U: usize = 20;
const L_ZETA: usize = 22;
const DEFECT_INPUTS: usize = 26;

// Locals feeding each defect row (motor rows, elastic position rows, and the
// velocity rows that carry the dynamics).
fn row_locals(r: usize) -> &'static [usize] {
    const THETA_ROWS: [[usize; 3]; 2] = [[0, 10, 20], [1, 11, 21]];
    const XI_ROWS: [[usize; 3]; 4] = [[2, 12, 16], [3, 13, 17], [4, 14, 18], [5, 15, 19]];
    const V_ROW: [usize; 18] =
        [6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 22, 23, 24, 25];
    match r {
        0 | 1 => &THETA_ROWS[r],
        2..=5 => &XI_ROWS[r - 2],
        _ => &V_ROW,
    }
}

// Locals with nonzero curvature in the velocity defect rows: current link
// positions, current elastic velocities, previous elastic velocities. Their
// order defines the seeding of the second-order sweep.
const CURV_LOCALS: [usize; 10] = [14, 15, 16, 17, 18, 19, 6, 7, 8, 9];

/// The transcribed problem. Construct once, then solve through
/// [`RelaxedNlp`] at one or more relaxation levels.
#[derive(Debug, Clone)]
pub struct Transcription {
    p: PlantParams,
    cfg: TranscriptionConfig,
    switching: Switching,
    /// With a fixed schedule: the pattern governing each step.
    step_patterns: Vec<ClutchPattern>,
    layout: Layout,
}

impl Transcription {
    pub fn new(
        p: PlantParams,
        cfg: TranscriptionConfig,
        switching: Switching,
    ) -> Result<Self, TranscriptionError> {
        p.validate()?;
        cfg.validate(&p)?;
        let step_patterns = match &switching {
            Switching::Free => Vec::new(),
            Switching::Fixed(schedule) => {
                schedule.validate(cfg.t_final)?;
                let delta = cfg.delta();
                (1..=cfg.n).map(|k| schedule.pattern_at(k as f64 * delta)).collect()
            }
        };
        let layout = Layout { n: cfg.n };
        Ok(Transcription { p, cfg, switching, step_patterns, layout })
    }

    /// The same problem with a rescaled switch objective: weight and detector
    /// sharpness multiplied by the given factors. Solvers introduce the
    /// cliff-like switch term gradually; the final solve must use factor one.
    pub fn with_switch_scaling(&self, weight_factor: f64, beta_factor: f64) -> Transcription {
        let mut out = self.clone();
        out.cfg.w_switch *= weight_factor;
        out.cfg.beta *= beta_factor;
        out
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }
    pub fn config(&self) -> &TranscriptionConfig {
        &self.cfg
    }
    pub fn params(&self) -> &PlantParams {
        &self.p
    }
    pub fn delta(&self) -> f64 {
        self.cfg.delta()
    }
    pub fn is_free_switching(&self) -> bool {
        matches!(self.switching, Switching::Free)
    }
    /// The pinned engagement sequence, when there is one.
    pub fn schedule(&self) -> Option<&ModeSchedule> {
        match &self.switching {
            Switching::Free => None,
            Switching::Fixed(schedule) => Some(schedule),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.layout.num_vars()
    }
    pub fn num_eq(&self) -> usize {
        self.layout.num_eq()
    }
    pub fn num_ineq(&self) -> usize {
        self.layout.n
            * if self.is_free_switching() { INEQ_PER_STAGE_FREE } else { INEQ_PER_STAGE_FIXED }
    }

    fn ineq_base(&self, s: usize) -> usize {
        s * if self.is_free_switching() { INEQ_PER_STAGE_FREE } else { INEQ_PER_STAGE_FIXED }
    }

    fn prev_state(&self, z: &[f64], s: usize) -> [f64; DIM_X] {
        if s == 0 {
            self.cfg.x0.to_array()
        } else {
            let mut x = [0.0; DIM_X];
            x.copy_from_slice(&z[self.layout.stage(s - 1)..self.layout.stage(s - 1) + DIM_X]);
            x
        }
    }

    fn cur_state(&self, z: &[f64], s: usize) -> [f64; DIM_X] {
        let mut x = [0.0; DIM_X];
        x.copy_from_slice(&z[self.layout.stage(s)..self.layout.stage(s) + DIM_X]);
        x
    }

    fn local_to_global(&self, s: usize, l: usize) -> Option<usize> {
        let base = self.layout.stage(s);
        match l {
            0..=9 => (s > 0).then(|| self.layout.stage(s - 1) + l),
            10..=19 => Some(base + (l - L_CUR)),
            20 | 21 => Some(base + U_OFF + (l - L_U)),
            _ => Some(base + ZETA_OFF + (l - L_ZETA)),
        }
    }

    /// One stage's implicit-Euler defect, generic over the scalar type.
    fn defect<T: Real>(
        &self,
        x_prev: &[T; DIM_X],
        x_cur: &[T; DIM_X],
        u: &[T; 2],
        zeta: &[T; N_CONSTRAINTS],
    ) -> [T; DIM_X] {
        let delta = self.delta();
        let (tp, xp, vp) = split_state(x_prev);
        let (tc, xc, vc) = split_state(x_cur);
        let mut r = [T::zero(); DIM_X];
        for j in 0..2 {
            r[j] = tc[j] - tp[j] - u[j].scale(delta);
        }
        for j in 0..DIM_XI {
            r[2 + j] = xc[j] - xp[j] - vc[j].scale(delta);
        }
        let eval = eval_model(&self.p, &tc, &xc, &vc);
        for j in 0..DIM_XI {
            let mut acc = T::zero();
            for l in 0..DIM_XI {
                acc += eval.pi[j][l] * (vc[l] - vp[l]);
            }
            acc += (eval.eta[j] + eval.tau_f[j] - eval.tau[j]).scale(delta);
            for i in 0..N_CONSTRAINTS {
                if GAMMA[i][j] != 0.0 {
                    acc -= zeta[i].scale(GAMMA[i][j]);
                }
            }
            r[6 + j] = acc;
        }
        r
    }

    fn gather_stage<T: Real, F: Fn(usize) -> T>(read: F) -> ([T; DIM_X], [T; DIM_X], [T; 2], [T; N_CONSTRAINTS]) {
        (
            std::array::from_fn(|j| read(L_PREV + j)),
            std::array::from_fn(|j| read(L_CUR + j)),
            std::array::from_fn(|j| read(L_U + j)),
            std::array::from_fn(|j| read(L_ZETA + j)),
        )
    }

    // -- equality constraints ------------------------------------------------

    pub fn eq_constraints(&self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.num_eq());
        let lay = self.layout;
        for s in 0..lay.n {
            let x_prev = self.prev_state(z, s);
            let x_cur = self.cur_state(z, s);
            let u = [z[lay.u(s, 0)], z[lay.u(s, 1)]];
            let zeta: [f64; 4] = std::array::from_fn(|i| z[lay.zeta(s, i)]);
            let r = self.defect(&x_prev, &x_cur, &u, &zeta);
            out[lay.defect_row(s, 0)..=lay.defect_row(s, 9)].copy_from_slice(&r);
            match &self.switching {
                Switching::Free => {
                    for i in 0..N_CONSTRAINTS {
                        out[lay.interface_row(s, i)] =
                            z[lay.zeta(s, i)] - z[lay.pi(s, i)] + z[lay.nu(s, i)];
                    }
                }
                Switching::Fixed(_) => {
                    let (_, _, vc) = split_state(&x_cur);
                    let phi = relative_speeds(&vc);
                    let pattern = self.step_patterns[s];
                    for i in 0..N_CONSTRAINTS {
                        out[lay.interface_row(s, i)] =
                            if pattern.engaged[i] { phi[i] } else { z[lay.zeta(s, i)] };
                    }
                }
            }
        }
    }

    /// Walk the equality Jacobian in a fixed order. With `z = None` only the
    /// structure is emitted (values zero); sharing one walker between the
    /// structure and value passes keeps them aligned by construction.
    fn visit_eq_jacobian(&self, z: Option<&[f64]>, mut emit: impl FnMut(usize, usize, f64)) {
        let lay = self.layout;
        for s in 0..lay.n {
            let jac: Option<[[f64; DEFECT_INPUTS]; DIM_X]> = z.map(|z| {
                let x_prev = self.prev_state(z, s);
                let x_cur = self.cur_state(z, s);
                let u = [z[lay.u(s, 0)], z[lay.u(s, 1)]];
                let zeta: [f64; 4] = std::array::from_fn(|i| z[lay.zeta(s, i)]);
                let mut input = [0.0; DEFECT_INPUTS];
                input[..DIM_X].copy_from_slice(&x_prev);
                input[L_CUR..L_CUR + DIM_X].copy_from_slice(&x_cur);
                input[L_U..L_U + 2].copy_from_slice(&u);
                input[L_ZETA..].copy_from_slice(&zeta);
                let seeds = Dual::<DEFECT_INPUTS>::seed(&input);
                let (xp, xc, ud, zd) = Self::gather_stage(|l| seeds[l]);
                let r = self.defect(&xp, &xc, &ud, &zd);
                std::array::from_fn(|row| r[row].eps)
            });
            for row in 0..DIM_X {
                for &l in row_locals(row) {
                    if let Some(col) = self.local_to_global(s, l) {
                        let v = jac.as_ref().map_or(0.0, |j| j[row][l]);
                        emit(lay.defect_row(s, row), col, v);
                    }
                }
            }
            match &self.switching {
                Switching::Free => {
                    for i in 0..N_CONSTRAINTS {
                        let row = lay.interface_row(s, i);
                        emit(row, lay.zeta(s, i), 1.0);
                        emit(row, lay.pi(s, i), -1.0);
                        emit(row, lay.nu(s, i), 1.0);
                    }
                }
                Switching::Fixed(_) => {
                    let pattern = self.step_patterns[s];
                    for i in 0..N_CONSTRAINTS {
                        let row = lay.interface_row(s, i);
                        if pattern.engaged[i] {
                            for j in 0..DIM_XI {
                                if GAMMA[i][j] != 0.0 {
                                    emit(row, lay.xi_dot(s, j), GAMMA[i][j]);
                                }
                            }
                        } else {
                            emit(row, lay.zeta(s, i), 1.0);
                        }
                    }
                }
            }
        }
    }

    // -- inequality constraints (cI <= 0) ------------------------------------

    pub fn ineq_constraints(&self, z: &[f64], epsilon: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.num_ineq());
        let lay = self.layout;
        for s in 0..lay.n {
            let base = self.ineq_base(s);
            let x_cur = self.cur_state(z, s);
            let (tc, xc, vc) = split_state(&x_cur);
            let mut at = base;
            if self.is_free_switching() {
                let phi = relative_speeds(&vc);
                for i in 0..N_CONSTRAINTS {
                    out[at + i] = -z[lay.gamma(s, i)] - phi[i];
                    out[at + 4 + i] = -z[lay.gamma(s, i)] + phi[i];
                    out[at + 8 + i] =
                        (z[lay.gamma(s, i)] + phi[i]) * z[lay.pi(s, i)] - epsilon;
                    out[at + 12 + i] =
                        (z[lay.gamma(s, i)] - phi[i]) * z[lay.nu(s, i)] - epsilon;
                }
                at += 16;
            }
            let ts = spring_torque(&self.p, &tc, &[xc[0], xc[1]]);
            for j in 0..2 {
                let defl = tc[j] - xc[j];
                out[at + 2 * j] = defl - self.p.phi_max;
                out[at + 2 * j + 1] = -defl - self.p.phi_max;
                out[at + 4 + 2 * j] = ts[j] - self.p.tau_s_max[j];
                out[at + 5 + 2 * j] = -ts[j] - self.p.tau_s_max[j];
            }
        }
    }

    fn visit_ineq_jacobian(&self, z: Option<&[f64]>, mut emit: impl FnMut(usize, usize, f64)) {
        let lay = self.layout;
        for s in 0..lay.n {
            let base = self.ineq_base(s);
            let mut at = base;
            if self.is_free_switching() {
                let (phi, pi_v, nu_v, gamma_v) = match z {
                    Some(z) => {
                        let (_, _, vc) = split_state(&self.cur_state(z, s));
                        (
                            relative_speeds(&vc),
                            std::array::from_fn(|i| z[lay.pi(s, i)]),
                            std::array::from_fn(|i| z[lay.nu(s, i)]),
                            std::array::from_fn(|i| z[lay.gamma(s, i)]),
                        )
                    }
                    None => ([0.0; 4], [0.0; 4], [0.0; 4], [0.0; 4]),
                };
                for i in 0..N_CONSTRAINTS {
                    // -gamma - phi <= 0
                    emit(at + i, lay.gamma(s, i), -1.0);
                    for j in 0..DIM_XI {
                        if GAMMA[i][j] != 0.0 {
                            emit(at + i, lay.xi_dot(s, j), -GAMMA[i][j]);
                        }
                    }
                    // -gamma + phi <= 0
                    emit(at + 4 + i, lay.gamma(s, i), -1.0);
                    for j in 0..DIM_XI {
                        if GAMMA[i][j] != 0.0 {
                            emit(at + 4 + i, lay.xi_dot(s, j), GAMMA[i][j]);
                        }
                    }
                    // (gamma + phi) pi <= eps
                    emit(at + 8 + i, lay.pi(s, i), gamma_v[i] + phi[i]);
                    emit(at + 8 + i, lay.gamma(s, i), pi_v[i]);
                    for j in 0..DIM_XI {
                        if GAMMA[i][j] != 0.0 {
                            emit(at + 8 + i, lay.xi_dot(s, j), pi_v[i] * GAMMA[i][j]);
                        }
                    }
                    // (gamma - phi) nu <= eps
                    emit(at + 12 + i, lay.nu(s, i), gamma_v[i] - phi[i]);
                    emit(at + 12 + i, lay.gamma(s, i), nu_v[i]);
                    for j in 0..DIM_XI {
                        if GAMMA[i][j] != 0.0 {
                            emit(at + 12 + i, lay.xi_dot(s, j), -nu_v[i] * GAMMA[i][j]);
                        }
                    }
                }
                at += 16;
            }
            for j in 0..2 {
                let k = self.p.k_spring[j];
                for (row, sign) in [(at + 2 * j, 1.0), (at + 2 * j + 1, -1.0)] {
                    emit(row, lay.theta(s, j), sign);
                    emit(row, lay.xi(s, j), -sign);
                }
                for (row, sign) in [(at + 4 + 2 * j, k), (at + 5 + 2 * j, -k)] {
                    emit(row, lay.theta(s, j), sign);
                    emit(row, lay.xi(s, j), -sign);
                }
            }
        }
    }

    // -- objective -----------------------------------------------------------

    fn launch_term<T: Real>(&self, q: &[T; 2], q_dot: &[T; 2]) -> T {
        -ee_speed_squared(&self.p, q, q_dot)
    }

    /// Smooth detector of an engagement change between consecutive steps,
    /// built from the impulse-transfer indicator of each step.
    fn switch_term<T: Real>(&self, zeta_prev: T, zeta_cur: T) -> T {
        let inv_delta = 1.0 / self.delta();
        let sp = engagement_indicator(zeta_prev.scale(inv_delta), self.cfg.alpha);
        let sc = engagement_indicator(zeta_cur.scale(inv_delta), self.cfg.alpha);
        ((-(sp * sc)).scale(self.cfg.beta).tanh() + T::one()).scale(0.5)
    }

    /// Objective pieces before weighting. `pin` regularizes the unused
    /// complementarity variables of fixed-schedule problems toward harmless
    /// interior values.
    pub fn objective_breakdown(&self, z: &[f64]) -> ObjectiveBreakdown {
        let lay = self.layout;
        let s_last = lay.n - 1;
        let x_n = self.cur_state(z, s_last);
        let (_, xc, vc) = split_state(&x_n);
        let launch = self.launch_term(&[xc[2], xc[3]], &[vc[2], vc[3]]);
        let mut switch_count = 0.0;
        if self.is_free_switching() {
            for s in 1..lay.n {
                for i in 0..N_CONSTRAINTS {
                    switch_count +=
                        self.switch_term(z[lay.zeta(s - 1, i)], z[lay.zeta(s, i)]);
                }
            }
        }
        let mut effort = 0.0;
        for s in 0..lay.n {
            for j in 0..2 {
                let u = z[lay.u(s, j)];
                effort += u * u;
            }
        }
        let mut pin = 0.0;
        if !self.is_free_switching() {
            for s in 0..lay.n {
                for i in 0..N_CONSTRAINTS {
                    let (pi_v, nu_v) = (z[lay.pi(s, i)], z[lay.nu(s, i)]);
                    let g = z[lay.gamma(s, i)] - 1.0;
                    pin += 0.5 * (pi_v * pi_v + nu_v * nu_v + g * g);
                }
            }
        }
        ObjectiveBreakdown {
            launch,
            switch_count,
            effort,
            pin,
            w_launch: self.cfg.w_launch,
            w_switch: self.cfg.w_switch,
            w_effort: self.cfg.w_effort,
        }
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        self.objective_breakdown(z).total()
    }

    pub fn gradient(&self, z: &[f64], grad: &mut [f64]) {
        grad.fill(0.0);
        let lay = self.layout;
        let s_last = lay.n - 1;
        // Launch term: derivatives with respect to (q, q_dot) at the last stage.
        {
            let x_n = self.cur_state(z, s_last);
            let (_, xc, vc) = split_state(&x_n);
            let input = [xc[2], xc[3], vc[2], vc[3]];
            let seeds = Dual::<4>::seed(&input);
            let val = self.launch_term(&[seeds[0], seeds[1]], &[seeds[2], seeds[3]]);
            let cols =
                [lay.xi(s_last, 2), lay.xi(s_last, 3), lay.xi_dot(s_last, 2), lay.xi_dot(s_last, 3)];
            for (slot, col) in cols.into_iter().enumerate() {
                grad[col] += self.cfg.w_launch * val.eps[slot];
            }
        }
        if self.is_free_switching() {
            for s in 1..lay.n {
                for i in 0..N_CONSTRAINTS {
                    let pair = [z[lay.zeta(s - 1, i)], z[lay.zeta(s, i)]];
                    let seeds = Dual::<2>::seed(&pair);
                    let val = self.switch_term(seeds[0], seeds[1]);
                    grad[lay.zeta(s - 1, i)] += self.cfg.w_switch * val.eps[0];
                    grad[lay.zeta(s, i)] += self.cfg.w_switch * val.eps[1];
                }
            }
        } else {
            for s in 0..lay.n {
                for i in 0..N_CONSTRAINTS {
                    grad[lay.pi(s, i)] += z[lay.pi(s, i)];
                    grad[lay.nu(s, i)] += z[lay.nu(s, i)];
                    grad[lay.gamma(s, i)] += z[lay.gamma(s, i)] - 1.0;
                }
            }
        }
        for s in 0..lay.n {
            for j in 0..2 {
                grad[lay.u(s, j)] += 2.0 * self.cfg.w_effort * z[lay.u(s, j)];
            }
        }
    }

    // -- Hessian of the Lagrangian -------------------------------------------

    /// Second-order walk mirroring [`Self::visit_eq_jacobian`]: one code path
    /// emits both the lower-triangle structure and the values.
    fn visit_hessian(
        &self,
        data: Option<(&[f64], f64, &[f64], &[f64])>,
        mut emit: impl FnMut(usize, usize, f64),
    ) {
        let lay = self.layout;
        let mut emit_sym = |a: usize, b: usize, v: f64| {
            if a >= b {
                emit(a, b, v);
            } else {
                emit(b, a, v);
            }
        };
        for s in 0..lay.n {
            // Curvature of the velocity defect rows, contracted with their
            // multipliers.
            let curv: Option<[[f64; 10]; 10]> = data.map(|(z, _, y_eq, _)| {
                let x_prev = self.prev_state(z, s);
                let x_cur = self.cur_state(z, s);
                let yv: [f64; 4] = std::array::from_fn(|j| y_eq[lay.defect_row(s, 6 + j)]);
                self.defect_velocity_curvature(&x_prev, &x_cur, &yv)
            });
            for a in 0..CURV_LOCALS.len() {
                let Some(ga) = self.local_to_global(s, CURV_LOCALS[a]) else { continue };
                for b in 0..=a {
                    let Some(gb) = self.local_to_global(s, CURV_LOCALS[b]) else { continue };
                    let v = curv.as_ref().map_or(0.0, |h| h[a][b]);
                    emit_sym(ga, gb, v);
                }
            }
            if self.is_free_switching() {
                // Bilinear complementarity rows have constant curvature.
                let base = self.ineq_base(s);
                for i in 0..N_CONSTRAINTS {
                    let y1 = data.map_or(0.0, |(_, _, _, y_ineq)| y_ineq[base + 8 + i]);
                    let y2 = data.map_or(0.0, |(_, _, _, y_ineq)| y_ineq[base + 12 + i]);
                    emit_sym(lay.pi(s, i), lay.gamma(s, i), y1);
                    emit_sym(lay.nu(s, i), lay.gamma(s, i), y2);
                    for j in 0..DIM_XI {
                        if GAMMA[i][j] != 0.0 {
                            emit_sym(lay.pi(s, i), lay.xi_dot(s, j), y1 * GAMMA[i][j]);
                            emit_sym(lay.nu(s, i), lay.xi_dot(s, j), -y2 * GAMMA[i][j]);
                        }
                    }
                }
                // Switch-count terms couple consecutive impulses.
                if s >= 1 {
                    for i in 0..N_CONSTRAINTS {
                        let h = data.map(|(z, obj_factor, _, _)| {
                            let pair = [z[lay.zeta(s - 1, i)], z[lay.zeta(s, i)]];
                            let seeds = Dual2::<2>::seed(&pair);
                            let val = self.switch_term(seeds[0], seeds[1]);
                            let w = obj_factor * self.cfg.w_switch;
                            [[val.h[0][0] * w, 0.0], [val.h[1][0] * w, val.h[1][1] * w]]
                        });
                        let (a, b) = (lay.zeta(s - 1, i), lay.zeta(s, i));
                        let h = h.unwrap_or([[0.0; 2]; 2]);
                        emit_sym(a, a, h[0][0]);
                        emit_sym(b, a, h[1][0]);
                        emit_sym(b, b, h[1][1]);
                    }
                }
            } else {
                let w = data.map_or(0.0, |(_, obj_factor, _, _)| obj_factor);
                for i in 0..N_CONSTRAINTS {
                    emit_sym(lay.pi(s, i), lay.pi(s, i), w);
                    emit_sym(lay.nu(s, i), lay.nu(s, i), w);
                    emit_sym(lay.gamma(s, i), lay.gamma(s, i), w);
                }
            }
            // Effort term.
            let w_eff = data.map_or(0.0, |(_, obj_factor, _, _)| 2.0 * obj_factor * self.cfg.w_effort);
            emit_sym(lay.u(s, 0), lay.u(s, 0), w_eff);
            emit_sym(lay.u(s, 1), lay.u(s, 1), w_eff);
        }
        // Launch term at the final stage.
        let s_last = lay.n - 1;
        let h_launch: Option<[[f64; 4]; 4]> = data.map(|(z, obj_factor, _, _)| {
            let x_n = self.cur_state(z, s_last);
            let (_, xc, vc) = split_state(&x_n);
            let input = [xc[2], xc[3], vc[2], vc[3]];
            let seeds = Dual2::<4>::seed(&input);
            let val = self.launch_term(&[seeds[0], seeds[1]], &[seeds[2], seeds[3]]);
            let w = obj_factor * self.cfg.w_launch;
            std::array::from_fn(|a| std::array::from_fn(|b| val.h[a][b] * w))
        });
        let cols = [
            lay.xi(s_last, 2),
            lay.xi(s_last, 3),
            lay.xi_dot(s_last, 2),
            lay.xi_dot(s_last, 3),
        ];
        for a in 0..4 {
            for b in 0..=a {
                let v = h_launch.as_ref().map_or(0.0, |h| h[a][b]);
                emit_sym(cols[a], cols[b], v);
            }
        }
    }

    /// Hessian of `sum_j yv[j] * r_velocity_j` over the ten curvature-bearing
    /// inputs, in `CURV_LOCALS` order.
    fn defect_velocity_curvature(
        &self,
        x_prev: &[f64; DIM_X],
        x_cur: &[f64; DIM_X],
        yv: &[f64; DIM_XI],
    ) -> [[f64; 10]; 10] {
        type D = Dual2<10>;
        let delta = self.delta();
        let (_, _, vp) = split_state(x_prev);
        let (tc, xc, vc) = split_state(x_cur);
        let tc_d = [D::constant(tc[0]), D::constant(tc[1])];
        let xc_d = [
            D::constant(xc[0]),
            D::constant(xc[1]),
            D::variable(xc[2], 0),
            D::variable(xc[3], 1),
        ];
        let vc_d: [D; 4] = std::array::from_fn(|j| D::variable(vc[j], 2 + j));
        let vp_d: [D; 4] = std::array::from_fn(|j| D::variable(vp[j], 6 + j));
        let eval = eval_model(&self.p, &tc_d, &xc_d, &vc_d);
        let mut contracted = D::constant(0.0);
        for j in 0..DIM_XI {
            let mut acc = D::constant(0.0);
            for l in 0..DIM_XI {
                acc += eval.pi[j][l] * (vc_d[l] - vp_d[l]);
            }
            acc += (eval.eta[j] + eval.tau_f[j] - eval.tau[j]).scale(delta);
            contracted += acc.scale(yv[j]);
        }
        contracted.h
    }

    // -- bounds and starting point -------------------------------------------

    pub fn bounds(&self, lower: &mut [f64], upper: &mut [f64]) {
        lower.fill(f64::NEG_INFINITY);
        upper.fill(f64::INFINITY);
        let lay = self.layout;
        let impulse_cap = self.delta() * self.cfg.zeta_max;
        for s in 0..lay.n {
            for j in 0..2 {
                lower[lay.theta(s, j)] = -self.p.theta_max;
                upper[lay.theta(s, j)] = self.p.theta_max;
                lower[lay.u(s, j)] = -self.p.u_max;
                upper[lay.u(s, j)] = self.p.u_max;
            }
            for i in 0..N_CONSTRAINTS {
                lower[lay.zeta(s, i)] = -impulse_cap;
                upper[lay.zeta(s, i)] = impulse_cap;
                lower[lay.pi(s, i)] = 0.0;
                upper[lay.pi(s, i)] = impulse_cap;
                lower[lay.nu(s, i)] = 0.0;
                upper[lay.nu(s, i)] = impulse_cap;
                lower[lay.gamma(s, i)] = 0.0;
                upper[lay.gamma(s, i)] = self.cfg.gamma_max;
            }
        }
    }

    /// Starting point: simulate the plant open-loop under a gentle sinusoidal
    /// motor-rate excitation, sample the grid, and seed the interface
    /// impulses from the velocity defect each engaged row would otherwise
    /// carry. Free switching rolls out with both clutches closed so the
    /// excitation actually reaches the links; a fixed schedule rolls out its
    /// own sequence.
    ///
    /// The link motion matters: from a rest start, the all-zero trajectory is
    /// a stationary point of the launch objective. A rollout that only wiggles
    /// the motors with every interface open leaves the links at rest too, and
    /// a Newton-type solver started there tends to fall back into that basin.
    ///
    /// The amplitude starts at half the motor-rate budget and backs off until
    /// the sampled trajectory keeps a comfortable margin inside the motor,
    /// deflection, and spring-torque boxes.
    pub fn initial_guess(&self) -> Result<Vec<f64>, SimError> {
        let lay = self.layout;
        let delta = self.delta();
        let schedule = match &self.switching {
            Switching::Free => ModeSchedule::constant([
                crate::modes::JointMode::Sea,
                crate::modes::JointMode::Sea,
            ]),
            Switching::Fixed(s) => s.clone(),
        };
        // Full sine period over the horizon: starts and ends at zero rate.
        let omega = 2.0 * std::f64::consts::PI / self.cfg.t_final;
        let grid: Vec<f64> = (1..=lay.n).map(|k| k as f64 * delta).collect();
        let mut chosen = None;
        for scale in [0.5, 0.3, 0.18, 0.1, 0.05, 0.02] {
            let amp = scale * self.p.u_max;
            let roll = rollout(
                &self.p,
                &schedule,
                &self.cfg.x0,
                &|t, _| [amp * (omega * t).sin(); 2],
                self.cfg.t_final,
                &grid,
                Method::Adaptive { abs_tol: 1.0e-8, rel_tol: 1.0e-8 },
            )?;
            let within_margins = roll.samples.iter().all(|sample| {
                let x = sample.state.to_array();
                let (tc, xc, _) = split_state(&x);
                let ts = spring_torque(&self.p, &tc, &[xc[0], xc[1]]);
                (0..2).all(|j| {
                    tc[j].abs() <= 0.9 * self.p.theta_max
                        && (tc[j] - xc[j]).abs() <= 0.8 * self.p.phi_max
                        && ts[j].abs() <= 0.8 * self.p.tau_s_max[j]
                })
            });
            let last = scale == 0.02;
            if within_margins || last {
                chosen = Some((amp, roll));
                break;
            }
        }
        let (amp, roll) = chosen.expect("amplitude loop always selects a rollout");
        let mut z = vec![0.0; lay.num_vars()];
        for (s, &t) in grid.iter().enumerate() {
            let sample = roll
                .samples
                .iter()
                .min_by(|a, b| {
                    let (da, db) = ((a.t - t).abs(), (b.t - t).abs());
                    da.partial_cmp(&db).expect("sample times are finite")
                })
                .expect("rollout produced samples");
            let x = sample.state.to_array();
            z[lay.stage(s)..lay.stage(s) + DIM_X].copy_from_slice(&x);
            for j in 0..2 {
                z[lay.u(s, j)] = amp * (omega * t).sin();
            }
        }
        // Second pass, once the states are in place: seed each engaged
        // interface's impulse so it absorbs the velocity defect left by the
        // zero-impulse dynamics, i.e. solve the engaged rows of
        // `r_v = Gamma^T zeta` per joint (exactly for two engaged rows, in
        // the least-squares sense for one).
        let all_engaged = ClutchPattern::from_modes([
            crate::modes::JointMode::Sea,
            crate::modes::JointMode::Sea,
        ]);
        let cap = 0.95 * delta * self.cfg.zeta_max;
        for s in 0..lay.n {
            let pattern = match &self.switching {
                Switching::Free => all_engaged,
                Switching::Fixed(_) => self.step_patterns[s],
            };
            let x_prev = self.prev_state(&z, s);
            let x_cur = self.cur_state(&z, s);
            let u = [z[lay.u(s, 0)], z[lay.u(s, 1)]];
            let r = self.defect(&x_prev, &x_cur, &u, &[0.0; N_CONSTRAINTS]);
            for j in 0..2 {
                let (r_psi, r_q) = (r[6 + j], r[8 + j]);
                let (zeta_b, zeta_c) = match (pattern.engaged[2 * j], pattern.engaged[2 * j + 1]) {
                    (false, false) => (0.0, 0.0),
                    (true, false) => (r_psi, 0.0),
                    (false, true) => (0.0, 0.5 * (r_psi - r_q)),
                    (true, true) => (r_psi + r_q, -r_q),
                };
                z[lay.zeta(s, 2 * j)] = zeta_b.clamp(-cap, cap);
                z[lay.zeta(s, 2 * j + 1)] = zeta_c.clamp(-cap, cap);
            }
            let (_, _, vc) = split_state(&x_cur);
            let phi = relative_speeds(&vc);
            match &self.switching {
                Switching::Free => {
                    for i in 0..N_CONSTRAINTS {
                        let zeta = z[lay.zeta(s, i)];
                        z[lay.pi(s, i)] = zeta.max(0.0);
                        z[lay.nu(s, i)] = (-zeta).max(0.0);
                        // Engaged interfaces sit near phi = 0; keep the slack
                        // tight there so the complementarity products start
                        // small, and loose where the interface runs free.
                        let pad = if pattern.engaged[i] { 0.01 } else { 0.1 };
                        z[lay.gamma(s, i)] = (phi[i].abs() + pad).min(self.cfg.gamma_max);
                    }
                }
                Switching::Fixed(_) => {
                    // The objective pins the unused split variables at
                    // (pi, nu, gamma) = (0, 0, 1); start them there.
                    for i in 0..N_CONSTRAINTS {
                        z[lay.gamma(s, i)] = 1.0;
                    }
                }
            }
        }
        Ok(z)
    }

    // -- reporting helpers ----------------------------------------------------

    /// Largest equality violation in the infinity norm.
    pub fn max_defect(&self, z: &[f64]) -> f64 {
        let mut out = vec![0.0; self.num_eq()];
        self.eq_constraints(z, &mut out);
        out.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest complementarity product over all stages and interfaces (zero
    /// for fixed-schedule problems, which have none).
    pub fn max_complementarity_product(&self, z: &[f64]) -> f64 {
        if !self.is_free_switching() {
            return 0.0;
        }
        let lay = self.layout;
        let mut worst = f64::NEG_INFINITY;
        for s in 0..lay.n {
            let (_, _, vc) = split_state(&self.cur_state(z, s));
            let phi = relative_speeds(&vc);
            for i in 0..N_CONSTRAINTS {
                let g = z[lay.gamma(s, i)];
                worst = worst.max((g + phi[i]) * z[lay.pi(s, i)]);
                worst = worst.max((g - phi[i]) * z[lay.nu(s, i)]);
            }
        }
        worst
    }

    /// Largest interface slip work `|zeta * phi|` over all stages and
    /// interfaces, in joules per step. An ideal interface transmits impulse
    /// only while its relative speed is zero, so this measures how much a
    /// solution violates that, independently of how the problem encodes it:
    /// relaxed solutions keep it at the order of the relaxation level, while
    /// pinned schedules drive it to the solver tolerance.
    pub fn max_slip_work(&self, z: &[f64]) -> f64 {
        let lay = self.layout;
        let mut worst = 0.0_f64;
        for s in 0..lay.n {
            let (_, _, vc) = split_state(&self.cur_state(z, s));
            let phi = relative_speeds(&vc);
            for i in 0..N_CONSTRAINTS {
                worst = worst.max((z[lay.zeta(s, i)] * phi[i]).abs());
            }
        }
        worst
    }

    /// Unpack a decision vector into grid trajectories (state row 0 is the
    /// fixed initial state).
    pub fn decode(&self, z: &[f64]) -> DecodedTrajectory {
        let lay = self.layout;
        let delta = self.delta();
        let mut times = Vec::with_capacity(lay.n + 1);
        let mut states = Vec::with_capacity(lay.n + 1);
        times.push(0.0);
        states.push(self.cfg.x0.to_array());
        let mut controls = Vec::with_capacity(lay.n);
        let mut impulses = Vec::with_capacity(lay.n);
        let mut speed_slack = Vec::with_capacity(lay.n);
        for s in 0..lay.n {
            times.push((s + 1) as f64 * delta);
            states.push(self.cur_state(z, s));
            controls.push([z[lay.u(s, 0)], z[lay.u(s, 1)]]);
            impulses.push(std::array::from_fn(|i| z[lay.zeta(s, i)]));
            speed_slack.push(std::array::from_fn(|i| z[lay.gamma(s, i)]));
        }
        DecodedTrajectory { delta, times, states, controls, impulses, speed_slack }
    }

    /// Read the switching sequence off a solution's impulse and relative
    /// speed trajectories.
    pub fn extract_mode_schedule(
        &self,
        z: &[f64],
        torque_eps: f64,
        speed_eps: f64,
    ) -> ModeSchedule {
        let decoded = self.decode(z);
        let torques: Vec<[f64; 4]> = decoded
            .impulses
            .iter()
            .map(|imp| imp.map(|v| v / decoded.delta))
            .collect();
        let phis: Vec<[f64; 4]> = decoded.states[1..]
            .iter()
            .map(|x| {
                let (_, _, vc) = split_state(x);
                relative_speeds(&vc)
            })
            .collect();
        extract_schedule(&torques, &phis, decoded.delta, torque_eps, speed_eps)
    }
}

/// Objective pieces of one decision vector, before and after weighting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    /// Negative squared terminal tip speed.
    pub launch: f64,
    /// Smooth switch count over all interfaces.
    pub switch_count: f64,
    /// Sum of squared motor-rate commands.
    pub effort: f64,
    /// Regularization of inactive variables (fixed-schedule problems only).
    pub pin: f64,
    pub w_launch: f64,
    pub w_switch: f64,
    pub w_effort: f64,
}

impl ObjectiveBreakdown {
    pub fn total(&self) -> f64 {
        self.w_launch * self.launch + self.w_switch * self.switch_count
            + self.w_effort * self.effort
            + self.pin
    }

    /// Terminal tip speed implied by the launch term.
    pub fn terminal_speed(&self) -> f64 {
        (-self.launch).max(0.0).sqrt()
    }
}

/// Grid trajectories decoded from a decision vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecodedTrajectory {
    pub delta: f64,
    /// n + 1 grid times starting at zero.
    pub times: Vec<f64>,
    /// n + 1 packed states; row 0 is the initial state.
    pub states: Vec<[f64; DIM_X]>,
    /// Motor-rate command held over each step.
    pub controls: Vec<[f64; 2]>,
    /// Interface impulses transmitted during each step.
    pub impulses: Vec<[f64; N_CONSTRAINTS]>,
    /// Relative-speed slack per step.
    pub speed_slack: Vec<[f64; N_CONSTRAINTS]>,
}

impl DecodedTrajectory {
    /// Average interface torques zeta / delta per step.
    pub fn interface_torques(&self) -> Vec<[f64; N_CONSTRAINTS]> {
        self.impulses.iter().map(|imp| imp.map(|v| v / self.delta)).collect()
    }

    pub fn final_state(&self) -> HybridState {
        HybridState::from_array(self.states.last().expect("decoded trajectory is non-empty"))
    }
}

/// [`Transcription`] posed as a nonlinear program at one relaxation level.
pub struct RelaxedNlp<'a> {
    pub trans: &'a Transcription,
    pub epsilon: f64,
}

impl ipsolve::Nlp for RelaxedNlp<'_> {
    fn num_vars(&self) -> usize {
        self.trans.num_vars()
    }
    fn num_eq(&self) -> usize {
        self.trans.num_eq()
    }
    fn num_ineq(&self) -> usize {
        self.trans.num_ineq()
    }
    fn bounds(&self, lower: &mut [f64], upper: &mut [f64]) {
        self.trans.bounds(lower, upper);
    }
    fn initial_point(&self, z: &mut [f64]) {
        match self.trans.initial_guess() {
            Ok(guess) => z.copy_from_slice(&guess),
            Err(_) => {
                // Fall back to tiling the initial state; the solver's own
                // feasibility restoration takes it from there.
                let lay = self.trans.layout();
                let x0 = self.trans.config().x0.to_array();
                z.fill(0.0);
                for s in 0..lay.n {
                    z[lay.stage(s)..lay.stage(s) + DIM_X].copy_from_slice(&x0);
                    for i in 0..N_CONSTRAINTS {
                        z[lay.gamma(s, i)] = 0.1;
                    }
                }
            }
        }
    }
    fn objective(&self, z: &[f64]) -> f64 {
        self.trans.objective(z)
    }
    fn gradient(&self, z: &[f64], grad: &mut [f64]) {
        self.trans.gradient(z, grad);
    }
    fn eq_constraints(&self, z: &[f64], out: &mut [f64]) {
        self.trans.eq_constraints(z, out);
    }
    fn ineq_constraints(&self, z: &[f64], out: &mut [f64]) {
        self.trans.ineq_constraints(z, self.epsilon, out);
    }
    fn eq_jacobian_structure(&self) -> Vec<(usize, usize)> {
        let mut pat = Vec::new();
        self.trans.visit_eq_jacobian(None, |r, c, _| pat.push((r, c)));
        pat
    }
    fn eq_jacobian_values(&self, z: &[f64], vals: &mut [f64]) {
        let mut at = 0;
        self.trans.visit_eq_jacobian(Some(z), |_, _, v| {
            vals[at] = v;
            at += 1;
        });
    }
    fn ineq_jacobian_structure(&self) -> Vec<(usize, usize)> {
        let mut pat = Vec::new();
        self.trans.visit_ineq_jacobian(None, |r, c, _| pat.push((r, c)));
        pat
    }
    fn ineq_jacobian_values(&self, z: &[f64], vals: &mut [f64]) {
        let mut at = 0;
        self.trans.visit_ineq_jacobian(Some(z), |_, _, v| {
            vals[at] = v;
            at += 1;
        });
    }
    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        let mut pat = Vec::new();
        self.trans.visit_hessian(None, |r, c, _| pat.push((r, c)));
        pat
    }
    fn hessian_values(&self, z: &[f64], obj_factor: f64, y_eq: &[f64], y_ineq: &[f64], vals: &mut [f64]) {
        let mut at = 0;
        self.trans.visit_hessian(Some((z, obj_factor, y_eq, y_ineq)), |_, _, v| {
            vals[at] = v;
            at += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modes::JointMode::{Dec, Sea, Stg};
    use approx::assert_relative_eq;
    use ipsolve::Nlp;

    fn small_free(n: usize) -> Transcription {
        let cfg = TranscriptionConfig { n, t_final: 0.05 * n as f64, ..Default::default() };
        Transcription::new(PlantParams::default(), cfg, Switching::Free).unwrap()
    }

    fn jitter(z: &mut [f64], scale: f64) {
        for (i, v) in z.iter_mut().enumerate() {
            *v += scale * ((i as f64) * 3.7).sin();
        }
    }

    /// Deterministic strictly interior test point.
    fn test_point(t: &Transcription) -> Vec<f64> {
        let mut z = t.initial_guess().unwrap();
        jitter(&mut z, 0.01);
        let lay = t.layout();
        for s in 0..lay.n {
            for i in 0..N_CONSTRAINTS {
                z[lay.pi(s, i)] = 0.002 + 0.001 * (s + i) as f64;
                z[lay.nu(s, i)] = 0.003 + 0.0005 * (s * i) as f64;
                z[lay.gamma(s, i)] = 0.5 + 0.1 * i as f64;
            }
        }
        z
    }

    #[test]
    fn dimensions_and_bounds() {
        let t = small_free(3);
        assert_eq!(t.num_vars(), 3 * STAGE_VARS);
        assert_eq!(t.num_eq(), 3 * EQ_PER_STAGE);
        assert_eq!(t.num_ineq(), 3 * INEQ_PER_STAGE_FREE);
        let mut lower = vec![0.0; t.num_vars()];
        let mut upper = vec![0.0; t.num_vars()];
        t.bounds(&mut lower, &mut upper);
        let lay = t.layout();
        assert_eq!(lower[lay.theta(1, 0)], -1.2);
        assert_eq!(upper[lay.u(2, 1)], 4.5);
        let cap = t.delta() * t.config().zeta_max;
        assert_eq!(upper[lay.zeta(0, 3)], cap);
        assert_eq!(lower[lay.pi(1, 2)], 0.0);
        assert_eq!(upper[lay.gamma(2, 0)], 100.0);
        assert_eq!(lower[lay.xi(0, 0)], f64::NEG_INFINITY);
    }

    #[test]
    fn initial_guess_is_strictly_interior() {
        let t = small_free(4);
        let z = t.initial_guess().unwrap();
        // The guess must not be a stationary point of the objective, or a
        // Newton-type solver would stop at the (useless) rest trajectory.
        let mut grad = vec![0.0; t.num_vars()];
        t.gradient(&z, &mut grad);
        assert!(grad.iter().any(|g| g.abs() > 1e-6), "guess sits on a stationary point");
        // Strictly inside the variable box...
        let mut lower = vec![0.0; t.num_vars()];
        let mut upper = vec![0.0; t.num_vars()];
        t.bounds(&mut lower, &mut upper);
        let lay = t.layout();
        for s in 0..lay.n {
            for j in 0..2 {
                assert!(z[lay.theta(s, j)].abs() < t.params().theta_max);
                assert!(z[lay.u(s, j)].abs() < t.params().u_max);
            }
        }
        // ...and strictly feasible in every relaxed inequality.
        let mut ineq = vec![0.0; t.num_ineq()];
        t.ineq_constraints(&z, 1e-1, &mut ineq);
        assert!(ineq.iter().all(|&v| v < 0.0));
    }

    #[test]
    fn defect_shrinks_quadratically_with_step() {
        // Integrate one accurate step of the decoupled dynamics and evaluate
        // the implicit-Euler defect: it must vanish at first order, i.e.
        // r = O(delta^2) for the dynamics rows.
        let p = PlantParams::default();
        let x0 = HybridState { q: [0.4, -0.2], q_dot: [1.0, 0.5], ..Default::default() };
        let schedule = ModeSchedule::constant([Dec, Dec]);
        let mut ratios = Vec::new();
        for &n in &[10usize, 20, 40] {
            let cfg = TranscriptionConfig {
                n,
                t_final: 0.2,
                x0,
                ..Default::default()
            };
            let t = Transcription::new(p.clone(), cfg, Switching::Free).unwrap();
            let delta = t.delta();
            let roll = rollout(
                &p,
                &schedule,
                &x0,
                &|_, _| [0.0, 0.0],
                delta,
                &[],
                Method::Adaptive { abs_tol: 1e-12, rel_tol: 1e-12 },
            )
            .unwrap();
            let x1 = roll.final_state().to_array();
            let r = t.defect(&x0.to_array(), &x1, &[0.0, 0.0], &[0.0; 4]);
            let worst = r.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            ratios.push(worst / (delta * delta));
        }
        // Constant ratio across step sizes means the defect is O(delta^2).
        let (a, c) = (ratios[0], ratios[2]);
        assert!(a / c < 4.0 && c / a < 4.0, "defect not second order: {ratios:?}");
    }

    #[test]
    fn equality_jacobian_matches_finite_differences() {
        let t = small_free(3);
        let nlp = RelaxedNlp { trans: &t, epsilon: 1e-2 };
        let z = test_point(&t);
        let pat = nlp.eq_jacobian_structure();
        let mut vals = vec![0.0; pat.len()];
        nlp.eq_jacobian_values(&z, &mut vals);
        let m = t.num_eq();
        let nv = t.num_vars();
        let mut dense = vec![vec![0.0; nv]; m];
        for (k, &(r, c)) in pat.iter().enumerate() {
            dense[r][c] += vals[k];
        }
        let h = 1e-6;
        let mut plus = vec![0.0; m];
        let mut minus = vec![0.0; m];
        for c in 0..nv {
            let mut zp = z.clone();
            zp[c] += h;
            let mut zm = z.clone();
            zm[c] -= h;
            t.eq_constraints(&zp, &mut plus);
            t.eq_constraints(&zm, &mut minus);
            for r in 0..m {
                let fd = (plus[r] - minus[r]) / (2.0 * h);
                assert!(
                    (dense[r][c] - fd).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "eq jac mismatch at ({r}, {c}): {} vs {fd}",
                    dense[r][c]
                );
            }
        }
    }

    #[test]
    fn inequality_jacobian_matches_finite_differences() {
        let t = small_free(2);
        let nlp = RelaxedNlp { trans: &t, epsilon: 1e-2 };
        let z = test_point(&t);
        let pat = nlp.ineq_jacobian_structure();
        let mut vals = vec![0.0; pat.len()];
        nlp.ineq_jacobian_values(&z, &mut vals);
        let m = t.num_ineq();
        let nv = t.num_vars();
        let mut dense = vec![vec![0.0; nv]; m];
        for (k, &(r, c)) in pat.iter().enumerate() {
            dense[r][c] += vals[k];
        }
        let h = 1e-6;
        let mut plus = vec![0.0; m];
        let mut minus = vec![0.0; m];
        for c in 0..nv {
            let mut zp = z.clone();
            zp[c] += h;
            let mut zm = z.clone();
            zm[c] -= h;
            t.ineq_constraints(&zp, 1e-2, &mut plus);
            t.ineq_constraints(&zm, 1e-2, &mut minus);
            for r in 0..m {
                let fd = (plus[r] - minus[r]) / (2.0 * h);
                assert!(
                    (dense[r][c] - fd).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "ineq jac mismatch at ({r}, {c}): {} vs {fd}",
                    dense[r][c]
                );
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let t = small_free(3);
        let mut z = test_point(&t);
        // Give the impulses nonzero values so the switch term has life.
        let lay = t.layout();
        for s in 0..lay.n {
            for i in 0..N_CONSTRAINTS {
                z[lay.zeta(s, i)] = 0.01 * ((s * 4 + i) as f64 - 5.0) / 10.0;
            }
        }
        let mut grad = vec![0.0; t.num_vars()];
        t.gradient(&z, &mut grad);
        let h = 1e-6;
        for c in 0..t.num_vars() {
            let mut zp = z.clone();
            zp[c] += h;
            let mut zm = z.clone();
            zm[c] -= h;
            let fd = (t.objective(&zp) - t.objective(&zm)) / (2.0 * h);
            assert!(
                (grad[c] - fd).abs() <= 1e-4 * (1.0 + fd.abs()),
                "gradient mismatch at {c}: {} vs {fd}",
                grad[c]
            );
        }
    }

    #[test]
    fn lagrangian_hessian_matches_finite_differences() {
        let t = small_free(2);
        let nlp = RelaxedNlp { trans: &t, epsilon: 1e-2 };
        let mut z = test_point(&t);
        let lay = t.layout();
        for s in 0..lay.n {
            for i in 0..N_CONSTRAINTS {
                z[lay.zeta(s, i)] = 0.003 * (1.0 + (s + i) as f64);
            }
        }
        let me = t.num_eq();
        let mi = t.num_ineq();
        let y_eq: Vec<f64> = (0..me).map(|r| 0.3 * ((r as f64) * 1.3).cos()).collect();
        let y_ineq: Vec<f64> = (0..mi).map(|r| 0.2 * ((r as f64) * 0.7).sin()).collect();
        let obj_factor = 0.8;
        let pat = nlp.hessian_structure();
        let mut vals = vec![0.0; pat.len()];
        nlp.hessian_values(&z, obj_factor, &y_eq, &y_ineq, &mut vals);
        let nv = t.num_vars();
        let mut dense = vec![vec![0.0; nv]; nv];
        for (k, &(r, c)) in pat.iter().enumerate() {
            assert!(r >= c, "hessian triplets must be lower triangle");
            dense[r][c] += vals[k];
            if r != c {
                dense[c][r] += vals[k];
            }
        }
        // Gradient of the Lagrangian, assembled from analytic pieces.
        let grad_l = |z: &[f64]| -> Vec<f64> {
            let mut g = vec![0.0; nv];
            t.gradient(z, &mut g);
            for v in g.iter_mut() {
                *v *= obj_factor;
            }
            let ep = nlp.eq_jacobian_structure();
            let mut ev = vec![0.0; ep.len()];
            nlp.eq_jacobian_values(z, &mut ev);
            for (k, &(r, c)) in ep.iter().enumerate() {
                g[c] += y_eq[r] * ev[k];
            }
            let ip = nlp.ineq_jacobian_structure();
            let mut iv = vec![0.0; ip.len()];
            nlp.ineq_jacobian_values(z, &mut iv);
            for (k, &(r, c)) in ip.iter().enumerate() {
                g[c] += y_ineq[r] * iv[k];
            }
            g
        };
        let h = 1e-5;
        for c in 0..nv {
            let mut zp = z.clone();
            zp[c] += h;
            let mut zm = z.clone();
            zm[c] -= h;
            let (gp, gm) = (grad_l(&zp), grad_l(&zm));
            for r in 0..nv {
                let fd = (gp[r] - gm[r]) / (2.0 * h);
                assert!(
                    (dense[r][c] - fd).abs() <= 2e-4 * (1.0 + fd.abs()),
                    "hessian mismatch at ({r}, {c}): {} vs {fd}",
                    dense[r][c]
                );
            }
        }
    }

    #[test]
    fn switch_objective_counts_engagement_changes() {
        // Interface 0 turns on, off, on: three changes. Others stay off.
        let t = small_free(6);
        let lay = t.layout();
        let mut z = vec![0.0; t.num_vars()];
        let strong = t.delta() * 2.0; // average torque 2.0, far beyond indicator width
        let pattern = [0.0, strong, strong, 0.0, strong, strong];
        for (s, &v) in pattern.iter().enumerate() {
            z[lay.zeta(s, 0)] = v;
        }
        let b = t.objective_breakdown(&z);
        assert_relative_eq!(b.switch_count, 3.0, epsilon = 1e-3);
        // Impulse scaling must not matter once the indicator saturates.
        for (s, &v) in pattern.iter().enumerate() {
            z[lay.zeta(s, 0)] = v * 10.0;
        }
        let b10 = t.objective_breakdown(&z);
        assert_relative_eq!(b10.switch_count, 3.0, epsilon = 1e-3);
    }

    #[test]
    fn effort_and_launch_terms_evaluate() {
        let t = small_free(2);
        let lay = t.layout();
        let mut z = vec![0.0; t.num_vars()];
        z[lay.u(0, 0)] = 1.0;
        z[lay.u(1, 1)] = -2.0;
        // Terminal link velocities produce tip speed.
        z[lay.xi_dot(1, 2)] = 1.0;
        let b = t.objective_breakdown(&z);
        assert_relative_eq!(b.effort, 5.0, epsilon = 1e-12);
        let p = PlantParams::default();
        let expected = (p.l_link[0] + p.l_link[1]).powi(2);
        assert_relative_eq!(-b.launch, expected, max_relative = 1e-12);
        assert_relative_eq!(b.terminal_speed(), expected.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn fixed_schedule_pins_modes_per_step() {
        let schedule = ModeSchedule {
            switch_times: vec![0.1],
            modes: vec![[Sea, Stg], [Dec, Sea]],
            meta: None,
        };
        let cfg = TranscriptionConfig { n: 4, t_final: 0.2, ..Default::default() };
        let t = Transcription::new(PlantParams::default(), cfg, Switching::Fixed(schedule)).unwrap();
        assert_eq!(t.num_ineq(), 4 * INEQ_PER_STAGE_FIXED);
        let lay = t.layout();
        let mut z = vec![0.0; t.num_vars()];
        // Steps 1-2 (ending at 0.05, 0.10) carry SEA/STG, steps 3-4 DEC/SEA.
        z[lay.xi_dot(0, 0)] = 0.7; // psi_1 speed
        z[lay.xi_dot(0, 2)] = 0.3; // q_1 speed
        z[lay.zeta(3, 0)] = 0.02;
        let mut eq = vec![0.0; t.num_eq()];
        t.eq_constraints(&z, &mut eq);
        // Step 1, SEA on joint 1: interface row 1 pins phi_1 = dpsi1 - dq1.
        assert_relative_eq!(eq[lay.interface_row(0, 1)], 0.4, epsilon = 1e-12);
        // Step 1, STG on joint 2: row 2 pins dpsi2 = 0 (currently satisfied).
        assert_eq!(eq[lay.interface_row(0, 2)], 0.0);
        // Step 1, joint 1 brake open: zeta_0 pinned to zero.
        assert_eq!(eq[lay.interface_row(0, 0)], 0.0);
        // Step 4 is DEC on joint 1: nonzero zeta_0 violates its pin.
        assert_relative_eq!(eq[lay.interface_row(3, 0)], 0.02, epsilon = 1e-15);
    }

    #[test]
    fn fixed_schedule_jacobians_match_finite_differences() {
        let schedule = ModeSchedule {
            switch_times: vec![0.05],
            modes: vec![[Stg, Dec], [Sea, Sea]],
            meta: None,
        };
        let cfg = TranscriptionConfig { n: 2, t_final: 0.1, ..Default::default() };
        let t =
            Transcription::new(PlantParams::default(), cfg, Switching::Fixed(schedule)).unwrap();
        let nlp = RelaxedNlp { trans: &t, epsilon: 0.0 };
        let mut z = t.initial_guess().unwrap();
        jitter(&mut z, 0.02);
        let pat = nlp.eq_jacobian_structure();
        let mut vals = vec![0.0; pat.len()];
        nlp.eq_jacobian_values(&z, &mut vals);
        let (m, nv) = (t.num_eq(), t.num_vars());
        let mut dense = vec![vec![0.0; nv]; m];
        for (k, &(r, c)) in pat.iter().enumerate() {
            dense[r][c] += vals[k];
        }
        let h = 1e-6;
        let mut plus = vec![0.0; m];
        let mut minus = vec![0.0; m];
        for c in 0..nv {
            let mut zp = z.clone();
            zp[c] += h;
            let mut zm = z.clone();
            zm[c] -= h;
            t.eq_constraints(&zp, &mut plus);
            t.eq_constraints(&zm, &mut minus);
            for r in 0..m {
                let fd = (plus[r] - minus[r]) / (2.0 * h);
                assert!(
                    (dense[r][c] - fd).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "fixed eq jac mismatch at ({r}, {c})"
                );
            }
        }
    }

    #[test]
    fn config_validation_rejects_degenerate_settings() {
        let p = PlantParams::default();
        let mut cfg = TranscriptionConfig { alpha: 0.0, ..Default::default() };
        assert!(matches!(
            cfg.validate(&p),
            Err(TranscriptionError::NotPositive { name: "alpha", .. })
        ));
        cfg.alpha = 100.0;
        cfg.n = 1;
        assert!(matches!(cfg.validate(&p), Err(TranscriptionError::TooFewSteps { n: 1 })));
        cfg.n = 10;
        cfg.x0.theta = [1.5, 0.0];
        assert!(matches!(cfg.validate(&p), Err(TranscriptionError::StartOutOfBounds { .. })));
        cfg.x0.theta = [0.0, 0.35];
        assert!(matches!(
            cfg.validate(&p),
            Err(TranscriptionError::StartOutOfBounds { limit: "spring deflection limit", .. })
        ));
    }

    #[test]
    fn decode_round_trips_the_layout() {
        let t = small_free(3);
        let z = test_point(&t);
        let d = t.decode(&z);
        assert_eq!(d.times.len(), 4);
        assert_eq!(d.states.len(), 4);
        assert_eq!(d.states[0], t.config().x0.to_array());
        let lay = t.layout();
        assert_eq!(d.controls[2][1], z[lay.u(2, 1)]);
        assert_eq!(d.impulses[1][3], z[lay.zeta(1, 3)]);
        let torques = d.interface_torques();
        assert_relative_eq!(torques[1][3], z[lay.zeta(1, 3)] / t.delta(), max_relative = 1e-15);
    }
}
