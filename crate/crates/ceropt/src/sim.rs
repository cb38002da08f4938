//! Event-driven simulation of the hybrid dynamics.
//!
//! Within a mode interval the elastic block obeys
//!
//! ```text
//! Pi xi_ddot = tau - eta - tau_f + Gp^T lambda,    Gp xi_ddot = 0,
//! ```
//!
//! with `Gp` the active constraint rows of the current clutch pattern; the
//! multiplier `lambda` is the torque each engaged interface transmits. At a
//! mode switch, velocities jump by the inertia-weighted projection onto the
//! new constraint set,
//!
//! ```text
//! Pi xi_dot+ = Pi xi_dot- + Gp^T Lambda,    Gp xi_dot+ = 0,
//! ```
//!
//! which never increases kinetic energy. Both saddle systems share one dense
//! solve, generic over the scalar type so sensitivities of the flow and of
//! the reset map come out of the same code.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifacts::{csv_body, csv_preamble, CsvError};
use crate::autodiff::{solve_dense, Real, SingularMatrix};
use crate::dynamics::{ee_velocity, eval_model, ModelEval};
use crate::modes::{ClutchPattern, JointMode, ModeSchedule, ScheduleError, N_CONSTRAINTS};
use crate::params::PlantParams;
use crate::state::{join_state, split_state, HybridState, DIM_X, DIM_XI};

/// Acceleration of the elastic block plus transmitted interface torques.
/// The torque vector is padded to all four interfaces, zero where disengaged.
pub fn constrained_accel<T: Real>(
    eval: &ModelEval<T>,
    pattern: ClutchPattern,
) -> Result<([T; DIM_XI], [T; N_CONSTRAINTS]), SingularMatrix> {
    let (rows, m) = pattern.constraint_rows();
    let mut a = [[T::zero(); DIM_XI + N_CONSTRAINTS]; DIM_XI + N_CONSTRAINTS];
    let mut b = [T::zero(); DIM_XI + N_CONSTRAINTS];
    for i in 0..DIM_XI {
        for j in 0..DIM_XI {
            a[i][j] = eval.pi[i][j];
        }
        b[i] = eval.tau[i] - eval.eta[i] - eval.tau_f[i];
    }
    for r in 0..m {
        for j in 0..DIM_XI {
            a[i_lagrange(r)][j] = T::from_f64(rows[r][j]);
            a[j][i_lagrange(r)] = T::from_f64(-rows[r][j]);
        }
    }
    solve_dense(&mut a, &mut b, DIM_XI + m)?;
    let xi_ddot = [b[0], b[1], b[2], b[3]];
    let mut lambda = [T::zero(); N_CONSTRAINTS];
    for (r, idx) in pattern.engaged_indices().enumerate() {
        lambda[idx] = b[DIM_XI + r];
    }
    Ok((xi_ddot, lambda))
}

const fn i_lagrange(r: usize) -> usize {
    DIM_XI + r
}

/// Velocity jump when `pattern` takes over: inertia-weighted projection of
/// `xi_dot` onto the constraint null space, plus the impulses that realize
/// it (padded, zero at disengaged interfaces).
pub fn impact_map<T: Real>(
    pi: &[[T; DIM_XI]; DIM_XI],
    pattern: ClutchPattern,
    xi_dot: &[T; DIM_XI],
) -> Result<([T; DIM_XI], [T; N_CONSTRAINTS]), SingularMatrix> {
    let (rows, m) = pattern.constraint_rows();
    let mut a = [[T::zero(); DIM_XI + N_CONSTRAINTS]; DIM_XI + N_CONSTRAINTS];
    let mut b = [T::zero(); DIM_XI + N_CONSTRAINTS];
    for i in 0..DIM_XI {
        for j in 0..DIM_XI {
            a[i][j] = pi[i][j];
            b[i] += pi[i][j] * xi_dot[j];
        }
    }
    for r in 0..m {
        for j in 0..DIM_XI {
            a[i_lagrange(r)][j] = T::from_f64(rows[r][j]);
            a[j][i_lagrange(r)] = T::from_f64(-rows[r][j]);
        }
    }
    solve_dense(&mut a, &mut b, DIM_XI + m)?;
    let plus = [b[0], b[1], b[2], b[3]];
    let mut impulses = [T::zero(); N_CONSTRAINTS];
    for (r, idx) in pattern.engaged_indices().enumerate() {
        impulses[idx] = b[DIM_XI + r];
    }
    Ok((plus, impulses))
}

/// State reset applied when `pattern` becomes active: positions persist,
/// elastic velocities are projected.
pub fn reset_map<T: Real>(
    p: &PlantParams,
    pattern: ClutchPattern,
    x: &[T; DIM_X],
) -> Result<[T; DIM_X], SingularMatrix> {
    let (theta, xi, xi_dot) = split_state(x);
    let eval = eval_model(p, &theta, &xi, &xi_dot);
    let (plus, _) = impact_map(&eval.pi, pattern, &xi_dot)?;
    Ok(join_state(&theta, &xi, &plus))
}

/// Hybrid vector field for a fixed clutch pattern: motors integrate the
/// commanded velocity, the elastic block follows the constrained dynamics.
pub fn vector_field<T: Real>(
    p: &PlantParams,
    pattern: ClutchPattern,
    x: &[T; DIM_X],
    u: &[T; 2],
) -> Result<[T; DIM_X], SingularMatrix> {
    let (theta, xi, xi_dot) = split_state(x);
    let eval = eval_model(p, &theta, &xi, &xi_dot);
    let (xi_ddot, _) = constrained_accel(&eval, pattern)?;
    Ok(join_state(&[u[0], u[1]], &xi_dot, &xi_ddot))
}

/// Elastic-block kinetic energy 1/2 xi_dot' Pi xi_dot.
pub fn kinetic_energy(pi: &[[f64; DIM_XI]; DIM_XI], xi_dot: &[f64; DIM_XI]) -> f64 {
    let mut ke = 0.0;
    for i in 0..DIM_XI {
        for j in 0..DIM_XI {
            ke += 0.5 * xi_dot[i] * pi[i][j] * xi_dot[j];
        }
    }
    ke
}

// ---------------------------------------------------------------------------
// Numerical integration
// ---------------------------------------------------------------------------

/// Right-hand side of a first-order ODE, written into a caller-owned buffer.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<(), SimError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Method {
    /// Embedded Runge-Kutta 5(4) with PI-free proportional step control.
    Adaptive { abs_tol: f64, rel_tol: f64 },
    /// Classical fourth-order Runge-Kutta with a fixed step.
    FixedRk4 { dt: f64 },
}

impl Default for Method {
    fn default() -> Self {
        Method::Adaptive { abs_tol: 1.0e-8, rel_tol: 1.0e-8 }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IntegrationStats {
    pub steps_accepted: usize,
    pub steps_rejected: usize,
    pub rhs_evals: usize,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("constraint system became singular at t = {t}")]
    Singular { t: f64 },
    #[error("state left the finite range at t = {t}")]
    NonFinite { t: f64 },
    #[error("step size underflow at t = {t}; the dynamics look discontinuous here")]
    StepUnderflow { t: f64 },
    #[error("integration exceeded {max_steps} steps")]
    TooManySteps { max_steps: usize },
    #[error("final time must exceed 0, got {t_final}")]
    BadHorizon { t_final: f64 },
}

// Dormand-Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B5: [f64; 7] =
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

const MAX_STEPS: usize = 2_000_000;

/// Advance `x` from `t0` to `t1` with the requested method. The endpoint is
/// hit exactly.
pub fn integrate<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    t1: f64,
    x: &mut [f64],
    method: Method,
    stats: &mut IntegrationStats,
) -> Result<(), SimError> {
    debug_assert_eq!(x.len(), sys.dim());
    if t1 <= t0 {
        return Ok(());
    }
    match method {
        Method::FixedRk4 { dt } => integrate_rk4(sys, t0, t1, x, dt, stats),
        Method::Adaptive { abs_tol, rel_tol } => {
            integrate_dp45(sys, t0, t1, x, abs_tol, rel_tol, stats)
        }
    }
}

fn integrate_rk4<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    t1: f64,
    x: &mut [f64],
    dt: f64,
    stats: &mut IntegrationStats,
) -> Result<(), SimError> {
    let n = x.len();
    let span = t1 - t0;
    let steps = (span / dt).ceil().max(1.0) as usize;
    if steps > MAX_STEPS {
        return Err(SimError::TooManySteps { max_steps: MAX_STEPS });
    }
    let h = span / steps as f64;
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        sys.eval(t, x, &mut k1)?;
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        sys.eval(t + 0.5 * h, &tmp, &mut k2)?;
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        sys.eval(t + 0.5 * h, &tmp, &mut k3)?;
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        sys.eval(t + h, &tmp, &mut k4)?;
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            if !x[i].is_finite() {
                return Err(SimError::NonFinite { t: t + h });
            }
        }
        stats.rhs_evals += 4;
        stats.steps_accepted += 1;
    }
    Ok(())
}

fn integrate_dp45<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    t1: f64,
    x: &mut [f64],
    abs_tol: f64,
    rel_tol: f64,
    stats: &mut IntegrationStats,
) -> Result<(), SimError> {
    let n = x.len();
    let span = t1 - t0;
    let mut t = t0;
    let mut h = (span / 100.0).min(1.0e-2).max(1.0e-10);
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
    let mut stage = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    sys.eval(t, x, &mut k[0])?;
    stats.rhs_evals += 1;
    let mut steps = 0;
    while t < t1 {
        steps += 1;
        if steps > MAX_STEPS {
            return Err(SimError::TooManySteps { max_steps: MAX_STEPS });
        }
        h = h.min(t1 - t);
        // Whether this step is clamped to land on the endpoint; if accepted,
        // assign t1 exactly rather than accumulate (t + h can round one ulp
        // short of t1 and strand the loop on a subnormal remainder).
        let hits_end = h == t1 - t;
        if h < 1.0e-14 * t.abs().max(1.0) {
            return Err(SimError::StepUnderflow { t });
        }
        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    let a = DP_A[s - 1][j];
                    if a != 0.0 {
                        acc += a * kj[i];
                    }
                }
                stage[i] = x[i] + h * acc;
            }
            let (dst_left, dst_right) = k.split_at_mut(s);
            let _ = dst_left;
            sys.eval(t + DP_C[s] * h, &stage, &mut dst_right[0])?;
            stats.rhs_evals += 1;
        }
        let mut err_sq = 0.0;
        let mut finite = true;
        for i in 0..n {
            let mut xi5 = x[i];
            let mut ei = 0.0;
            for s in 0..7 {
                xi5 += h * DP_B5[s] * k[s][i];
                ei += h * (DP_B5[s] - DP_B4[s]) * k[s][i];
            }
            x_new[i] = xi5;
            finite &= xi5.is_finite();
            let scale = abs_tol + rel_tol * x[i].abs().max(xi5.abs());
            err_sq += (ei / scale) * (ei / scale);
        }
        if !finite {
            return Err(SimError::NonFinite { t });
        }
        let err = (err_sq / n as f64).sqrt();
        if err <= 1.0 {
            t = if hits_end { t1 } else { t + h };
            x.copy_from_slice(&x_new);
            // First-same-as-last: stage 7 was evaluated at (t + h, x_new).
            let k6 = k[6].clone();
            k[0].copy_from_slice(&k6);
            stats.steps_accepted += 1;
        } else {
            stats.steps_rejected += 1;
        }
        let factor = if err > 0.0 { 0.9 * err.powf(-0.2) } else { 5.0 };
        h *= factor.clamp(0.2, 5.0);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Hybrid rollout
// ---------------------------------------------------------------------------

struct PatternSystem<'a> {
    p: &'a PlantParams,
    pattern: ClutchPattern,
    control: &'a dyn Fn(f64, &[f64; DIM_X]) -> [f64; 2],
}

impl OdeSystem for PatternSystem<'_> {
    fn dim(&self) -> usize {
        DIM_X
    }

    fn eval(&self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<(), SimError> {
        let mut xa = [0.0; DIM_X];
        xa.copy_from_slice(x);
        let u = (self.control)(t, &xa);
        let f = vector_field(self.p, self.pattern, &xa, &u)
            .map_err(|SingularMatrix| SimError::Singular { t })?;
        dx.copy_from_slice(&f);
        Ok(())
    }
}

/// One recorded time point of a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: HybridState,
    pub modes: [JointMode; 2],
    /// Torques transmitted by the four interfaces (zero where disengaged).
    pub lambda: [f64; N_CONSTRAINTS],
    pub ee_speed: f64,
}

/// A velocity projection applied at a mode switch.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactRecord {
    pub t: f64,
    pub modes_before: [JointMode; 2],
    pub modes_after: [JointMode; 2],
    pub impulses: [f64; N_CONSTRAINTS],
    /// Kinetic energy removed by the projection; never negative.
    pub kinetic_drop: f64,
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub samples: Vec<Sample>,
    pub impacts: Vec<ImpactRecord>,
    pub stats: IntegrationStats,
}

impl Rollout {
    pub fn final_state(&self) -> HybridState {
        self.samples.last().expect("rollout records at least the initial sample").state
    }
}

fn make_sample(p: &PlantParams, t: f64, x: &[f64; DIM_X], pattern: ClutchPattern) -> Result<Sample, SimError> {
    let state = HybridState::from_array(x);
    let eval = eval_model(p, &state.theta, &state.xi(), &state.xi_dot());
    let (_, lambda) =
        constrained_accel(&eval, pattern).map_err(|SingularMatrix| SimError::Singular { t })?;
    let v = ee_velocity(p, &state.q, &state.q_dot);
    Ok(Sample {
        t,
        state,
        modes: pattern.modes(),
        lambda,
        ee_speed: (v[0] * v[0] + v[1] * v[1]).sqrt(),
    })
}

/// Simulate the closed system under a mode schedule.
///
/// `breakpoints` are extra times where integration stops exactly and a sample
/// is recorded; pass the control grid here when the control law is piecewise
/// constant, since the integrator assumes smoothness between stops. Samples
/// are always recorded at 0, every breakpoint and switch time, and `t_final`.
/// At a switch time the recorded sample belongs to the outgoing mode
/// (matching the left-continuous convention of [`ModeSchedule`]); the
/// post-impact state is the first sample of the next interval.
pub fn rollout(
    p: &PlantParams,
    schedule: &ModeSchedule,
    x0: &HybridState,
    control: &dyn Fn(f64, &[f64; DIM_X]) -> [f64; 2],
    t_final: f64,
    breakpoints: &[f64],
    method: Method,
) -> Result<Rollout, SimError> {
    if !(t_final > 0.0) || !t_final.is_finite() {
        return Err(SimError::BadHorizon { t_final });
    }
    schedule.validate(t_final)?;

    let mut stops: Vec<f64> = Vec::with_capacity(breakpoints.len() + schedule.switch_times.len() + 1);
    stops.extend(breakpoints.iter().copied().filter(|&t| t > 0.0 && t < t_final));
    stops.extend(schedule.switch_times.iter().copied());
    stops.push(t_final);
    stops.sort_by(|a, b| a.partial_cmp(b).expect("stop times must not be NaN"));
    stops.dedup_by(|a, b| (*a - *b).abs() < 1.0e-12);

    let mut impacts = Vec::new();
    let mut stats = IntegrationStats::default();
    let mut samples = Vec::with_capacity(stops.len() + 1);

    // Make the initial state consistent with the initial pattern.
    let mut pattern = schedule.pattern_at(0.0);
    let mut x = x0.to_array();
    apply_reset(p, &mut x, schedule.modes[0], pattern, 0.0, &mut impacts)?;
    samples.push(make_sample(p, 0.0, &x, pattern)?);

    let mut t = 0.0;
    let mut switch_iter = schedule.switch_times.iter().copied().peekable();
    for &stop in &stops {
        if stop - t > 1.0e-12 {
            let sys = PatternSystem { p, pattern, control };
            integrate(&sys, t, stop, &mut x, method, &mut stats)?;
        }
        t = stop;
        samples.push(make_sample(p, t, &x, pattern)?);
        let is_switch = matches!(switch_iter.peek(), Some(&s) if (s - t).abs() < 1.0e-12);
        if is_switch {
            switch_iter.next();
            let old_modes = pattern.modes();
            let new_modes = schedule.modes_at(t + 1.0e-12);
            pattern = ClutchPattern::from_modes(new_modes);
            apply_reset(p, &mut x, old_modes, pattern, t, &mut impacts)?;
        }
    }
    Ok(Rollout { samples, impacts, stats })
}

fn apply_reset(
    p: &PlantParams,
    x: &mut [f64; DIM_X],
    old_modes: [JointMode; 2],
    pattern: ClutchPattern,
    t: f64,
    impacts: &mut Vec<ImpactRecord>,
) -> Result<(), SimError> {
    let (theta, xi, xi_dot) = split_state(x);
    let eval = eval_model(p, &theta, &xi, &xi_dot);
    let (plus, impulses) = impact_map(&eval.pi, pattern, &xi_dot)
        .map_err(|SingularMatrix| SimError::Singular { t })?;
    let drop = kinetic_energy(&eval.pi, &xi_dot) - kinetic_energy(&eval.pi, &plus);
    let moved = impulses.iter().any(|v| v.abs() > 1.0e-14) || drop.abs() > 1.0e-14;
    *x = join_state(&theta, &xi, &plus);
    if moved {
        impacts.push(ImpactRecord {
            t,
            modes_before: old_modes,
            modes_after: pattern.modes(),
            impulses,
            kinetic_drop: drop,
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// CSV artifact
// ---------------------------------------------------------------------------

pub const ROLLOUT_SCHEMA: &str = "ceropt.rollout.v1";

const ROLLOUT_HEADER: &str =
    "t,theta1,theta2,psi1,psi2,q1,q2,dpsi1,dpsi2,dq1,dq2,mode_j1,mode_j2,v_ee";

/// Serialize a rollout's samples. Floats use shortest round-trip formatting,
/// so identical runs produce identical bytes.
pub fn rollout_to_csv(rollout: &Rollout, config_hash: &str, seed: u64) -> String {
    let mut out = csv_preamble(ROLLOUT_SCHEMA, config_hash, seed);
    out.push_str(ROLLOUT_HEADER);
    out.push('\n');
    for s in &rollout.samples {
        let x = s.state.to_array();
        let mut row = format!("{}", s.t);
        for v in x {
            row.push(',');
            row.push_str(&format!("{v}"));
        }
        row.push(',');
        row.push_str(s.modes[0].label());
        row.push(',');
        row.push_str(s.modes[1].label());
        row.push(',');
        row.push_str(&format!("{}", s.ee_speed));
        out.push_str(&row);
        out.push('\n');
    }
    out
}

/// Parse a rollout CSV produced by [`rollout_to_csv`]. Transmitted torques
/// are not part of the file format and come back as zeros.
pub fn rollout_from_csv(text: &str) -> Result<Vec<Sample>, CsvError> {
    let body = csv_body(text, ROLLOUT_SCHEMA)?;
    let expected = 14;
    let mut samples = Vec::with_capacity(body.len());
    for (line, raw) in body {
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != expected {
            return Err(CsvError::ColumnCount { line, expected, found: fields.len() });
        }
        let mut nums = [0.0; 11];
        for (slot, field) in nums.iter_mut().zip(&fields[..11]) {
            *slot = field.trim().parse().map_err(|source| CsvError::BadNumber { line, source })?;
        }
        let mode = |label: &str| {
            JointMode::from_label(label.trim())
                .ok_or_else(|| CsvError::BadMode { line, label: label.to_string() })
        };
        let modes = [mode(fields[11])?, mode(fields[12])?];
        let ee_speed: f64 =
            fields[13].trim().parse().map_err(|source| CsvError::BadNumber { line, source })?;
        let mut x = [0.0; DIM_X];
        x.copy_from_slice(&nums[1..11]);
        samples.push(Sample {
            t: nums[0],
            state: HybridState::from_array(&x),
            modes,
            lambda: [0.0; N_CONSTRAINTS],
            ee_speed,
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::total_energy;
    use crate::modes::JointMode::{Dec, Sea, Stg};
    use approx::assert_relative_eq;

    fn params() -> PlantParams {
        PlantParams::default()
    }

    #[test]
    fn braked_spring_holds_preload_torque() {
        // Joint 1 brake closed with the spring wound 0.1 rad: the brake must
        // transmit exactly the spring torque, with no spring-side motion.
        let p = params();
        let theta = [0.1, 0.0];
        let xi = [0.0; 4];
        let xi_dot = [0.0; 4];
        let eval = eval_model(&p, &theta, &xi, &xi_dot);
        let pattern = ClutchPattern::from_modes([Stg, Dec]);
        let (xi_ddot, lambda) = constrained_accel(&eval, pattern).unwrap();
        let spring = p.k_spring[0] * 0.1;
        assert_relative_eq!(lambda[0].abs(), spring, max_relative = 1e-12);
        assert_relative_eq!(lambda[0], -spring, max_relative = 1e-12);
        for a in xi_ddot {
            assert!(a.abs() < 1e-12, "preloaded braked joint should not accelerate");
        }
        assert_eq!(lambda[1], 0.0);
        assert_eq!(lambda[2], 0.0);
    }

    #[test]
    fn engaged_rows_have_zero_constrained_acceleration() {
        let p = params();
        let theta = [0.4, -0.3];
        let xi = [0.1, -0.2, 0.5, -0.7];
        let xi_dot = [0.0, 0.3, 0.0, 0.3];
        let eval = eval_model(&p, &theta, &xi, &xi_dot);
        for pattern in ClutchPattern::all() {
            // Pre-project velocities so the pattern's constraints hold.
            let (v, _) = impact_map(&eval.pi, pattern, &xi_dot).unwrap();
            let eval_v = eval_model(&p, &theta, &xi, &v);
            let (acc, _) = constrained_accel(&eval_v, pattern).unwrap();
            let (rows, m) = pattern.constraint_rows();
            for r in 0..m {
                let dot: f64 = (0..DIM_XI).map(|j| rows[r][j] * acc[j]).sum();
                assert!(dot.abs() < 1e-10, "row {r} acceleration {dot} for {pattern:?}");
            }
        }
    }

    #[test]
    fn impacts_never_add_kinetic_energy() {
        let p = params();
        let xi = [0.3, -0.1, 0.9, -1.4];
        let eval = eval_model(&p, &[0.0, 0.0], &xi, &[0.0; 4]);
        let xi_dot = [1.5, -2.0, 0.7, 3.0];
        for pattern in ClutchPattern::all() {
            let (plus, _) = impact_map(&eval.pi, pattern, &xi_dot).unwrap();
            let before = kinetic_energy(&eval.pi, &xi_dot);
            let after = kinetic_energy(&eval.pi, &plus);
            assert!(after <= before + 1e-12, "pattern {pattern:?} gained energy");
            // Engaged interfaces end up with zero relative speed.
            let (rows, m) = pattern.constraint_rows();
            for r in 0..m {
                let dot: f64 = (0..DIM_XI).map(|j| rows[r][j] * plus[j]).sum();
                assert!(dot.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reset_is_idempotent() {
        let p = params();
        let x = [0.1, 0.2, 0.05, -0.02, 0.4, -0.6, 1.0, -2.0, 0.5, 0.8];
        let pattern = ClutchPattern::from_modes([Sea, Stg]);
        let once = reset_map(&p, pattern, &x).unwrap();
        let twice = reset_map(&p, pattern, &once).unwrap();
        for i in 0..DIM_X {
            assert_relative_eq!(once[i], twice[i], epsilon = 1e-13);
        }
    }

    struct Circle;
    impl OdeSystem for Circle {
        fn dim(&self) -> usize {
            2
        }
        fn eval(&self, _t: f64, x: &[f64], dx: &mut [f64]) -> Result<(), SimError> {
            dx[0] = x[1];
            dx[1] = -x[0];
            Ok(())
        }
    }

    #[test]
    fn adaptive_integrator_closes_a_circle() {
        let mut x = [1.0, 0.0];
        let mut stats = IntegrationStats::default();
        integrate(
            &Circle,
            0.0,
            2.0 * std::f64::consts::PI,
            &mut x,
            Method::Adaptive { abs_tol: 1e-10, rel_tol: 1e-10 },
            &mut stats,
        )
        .unwrap();
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-8);
        assert_relative_eq!(x[1], 0.0, epsilon = 1e-8);
        assert!(stats.steps_accepted > 10);
    }

    #[test]
    fn fixed_step_matches_adaptive_on_smooth_problem() {
        let mut xa = [1.0, 0.0];
        let mut xb = [1.0, 0.0];
        let mut stats = IntegrationStats::default();
        integrate(&Circle, 0.0, 1.0, &mut xa, Method::default(), &mut stats).unwrap();
        integrate(&Circle, 0.0, 1.0, &mut xb, Method::FixedRk4 { dt: 1e-3 }, &mut stats).unwrap();
        assert_relative_eq!(xa[0], xb[0], epsilon = 1e-7);
        assert_relative_eq!(xa[1], xb[1], epsilon = 1e-7);
    }

    #[test]
    fn frictionless_decoupled_swing_conserves_energy() {
        let mut p = params();
        p.tau_c_q = [0.0, 0.0];
        p.tau_c_psi = [0.0, 0.0];
        p.d_q = [0.0, 0.0];
        p.d_psi = [0.0, 0.0];
        let x0 = HybridState { q: [0.8, -0.4], q_dot: [1.0, 0.5], ..Default::default() };
        let schedule = ModeSchedule::constant([Dec, Dec]);
        let r = rollout(
            &p,
            &schedule,
            &x0,
            &|_, _| [0.0, 0.0],
            0.5,
            &[0.1, 0.2, 0.3, 0.4],
            Method::Adaptive { abs_tol: 1e-10, rel_tol: 1e-10 },
        )
        .unwrap();
        let e0 = total_energy(&p, &x0);
        for s in &r.samples {
            assert_relative_eq!(total_energy(&p, &s.state), e0, max_relative = 1e-7);
        }
        assert!(r.impacts.is_empty(), "no constraint change, no impact");
    }

    #[test]
    fn friction_only_removes_energy() {
        let p = params();
        let x0 = HybridState { q: [1.0, 0.3], q_dot: [2.0, -1.0], ..Default::default() };
        let schedule = ModeSchedule::constant([Dec, Dec]);
        let r = rollout(&p, &schedule, &x0, &|_, _| [0.0, 0.0], 0.6, &[], Method::default())
            .unwrap();
        let mut prev = f64::INFINITY;
        for s in &r.samples {
            let e = total_energy(&p, &s.state);
            assert!(e <= prev + 1e-9, "energy increased without an energy source");
            prev = e;
        }
    }

    #[test]
    fn rollout_samples_every_requested_stop_and_switch() {
        let p = params();
        let schedule = ModeSchedule {
            switch_times: vec![0.12],
            modes: vec![[Sea, Stg], [Dec, Sea]],
            meta: None,
        };
        let x0 = HybridState { q_dot: [0.5, -0.2], psi_dot: [0.5, 0.0], ..Default::default() };
        let r = rollout(&p, &schedule, &x0, &|_, _| [1.0, -1.0], 0.3, &[0.05, 0.25], Method::default())
            .unwrap();
        let times: Vec<f64> = r.samples.iter().map(|s| s.t).collect();
        for expected in [0.0, 0.05, 0.12, 0.25, 0.3] {
            assert!(
                times.iter().any(|&t| (t - expected).abs() < 1e-12),
                "missing sample at {expected}, got {times:?}"
            );
        }
        // The sample at the switch carries the outgoing modes.
        let at_switch = r.samples.iter().find(|s| (s.t - 0.12).abs() < 1e-12).unwrap();
        assert_eq!(at_switch.modes, [Sea, Stg]);
        // Motor positions integrate the commanded rate exactly.
        let last = r.final_state();
        assert_relative_eq!(last.theta[0], 0.3, epsilon = 1e-9);
        assert_relative_eq!(last.theta[1], -0.3, epsilon = 1e-9);
    }

    #[test]
    fn inconsistent_start_produces_a_recorded_impact() {
        let p = params();
        // SEA on joint 1 but psi and q speeds disagree: projection at t = 0.
        let schedule = ModeSchedule::constant([Sea, Dec]);
        let x0 = HybridState { psi_dot: [1.0, 0.0], q_dot: [0.0, 0.0], ..Default::default() };
        let r = rollout(&p, &schedule, &x0, &|_, _| [0.0, 0.0], 0.05, &[], Method::default())
            .unwrap();
        assert_eq!(r.impacts.len(), 1);
        assert_eq!(r.impacts[0].t, 0.0);
        assert!(r.impacts[0].kinetic_drop > 0.0);
        let first = &r.samples[0];
        assert_relative_eq!(first.state.psi_dot[0], first.state.q_dot[0], epsilon = 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let p = params();
        let schedule = ModeSchedule::constant([Dec, Dec]);
        let x0 = HybridState { q_dot: [0.7, 0.0], ..Default::default() };
        let r =
            rollout(&p, &schedule, &x0, &|_, _| [0.0, 0.0], 0.02, &[0.01], Method::default()).unwrap();
        let text = rollout_to_csv(&r, "deadbeefdeadbeef", 7);
        let parsed = rollout_from_csv(&text).unwrap();
        assert_eq!(parsed.len(), r.samples.len());
        for (a, b) in parsed.iter().zip(&r.samples) {
            assert_eq!(a.t, b.t);
            assert_eq!(a.state, b.state);
            assert_eq!(a.modes, b.modes);
            assert_eq!(a.ee_speed, b.ee_speed);
        }
        assert!(rollout_from_csv(&text.replace("rollout.v1", "rollout.v9")).is_err());
    }
}
