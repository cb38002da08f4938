//! Time-varying LQR tracking of a reference trajectory across mode switches.
//!
//! Along a reference with a known switching schedule, each smooth interval
//! contributes a linearization (A(t), B(t)) of the pattern dynamics, and the
//! quadratic tracking cost induces the backward Riccati equation
//!
//! ```text
//! -dP/dt = A'P + PA - P B R^-1 B' P + Q,    P(T) = P_T.
//! ```
//!
//! At a scheduled switch the closed-loop state passes through the velocity
//! projection, so the cost-to-go jumps by the congruence
//!
//! ```text
//! P(t-) = (I + H)' P(t+) (I + H),
//! ```
//!
//! where `H` is the Jacobian of the jump displacement `g(x) - x` of the
//! incoming pattern's reset. Positions pass through every switch, so the
//! position rows of `H` vanish; the velocity rows are generally nonzero even
//! when the reference itself crosses the switch with consistent velocities,
//! because the projection still reshapes neighboring states.
//!
//! Cost-to-go and gains are stored on a per-interval grid and interpolated
//! linearly in time; the feedback law is `u = u_ref - K (x - x_ref)`, clamped
//! to the motor-rate box.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifacts::{csv_preamble, ArtifactMeta};
use crate::autodiff::{Dual, SingularMatrix};
use crate::modes::{ClutchPattern, JointMode, ModeSchedule, ScheduleError};
use crate::params::PlantParams;
use crate::sim::{
    integrate, reset_map, rollout, vector_field, IntegrationStats, Method, OdeSystem, Rollout,
    SimError,
};
use crate::state::{HybridState, DIM_X};
use crate::transcription::DecodedTrajectory;

/// Quadratic tracking weights. All matrices are diagonal, which is what a
/// config file can sensibly carry; `R` must be strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LqrWeights {
    /// Running state-error weight.
    pub q_diag: [f64; DIM_X],
    /// Running control-correction weight.
    pub r_diag: [f64; 2],
    /// Terminal state-error weight.
    pub p_t_diag: [f64; DIM_X],
    /// Feed back only the elastic coordinates: motor-position error is
    /// ignored both in the cost and in the feedback error vector.
    pub elastic_only: bool,
}

impl Default for LqrWeights {
    fn default() -> Self {
        LqrWeights {
            q_diag: [1.0; DIM_X],
            r_diag: [0.1, 0.1],
            p_t_diag: [1.0; DIM_X],
            elastic_only: false,
        }
    }
}

impl LqrWeights {
    pub fn validate(&self) -> Result<(), LqrError> {
        for v in self.r_diag {
            if !(v > 0.0) || !v.is_finite() {
                return Err(LqrError::BadWeights { what: format!("control weight {v}") });
            }
        }
        for v in self.q_diag.iter().chain(&self.p_t_diag) {
            if !(*v >= 0.0) || !v.is_finite() {
                return Err(LqrError::BadWeights { what: format!("state weight {v}") });
            }
        }
        Ok(())
    }

    fn q_matrix(&self) -> DMatrix<f64> {
        self.state_weight(&self.q_diag)
    }

    fn p_t_matrix(&self) -> DMatrix<f64> {
        self.state_weight(&self.p_t_diag)
    }

    fn state_weight(&self, diag: &[f64; DIM_X]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(DIM_X, DIM_X);
        for j in 0..DIM_X {
            // Motor positions are the first two state entries.
            m[(j, j)] = if self.elastic_only && j < 2 { 0.0 } else { diag[j] };
        }
        m
    }

    fn r_inverse(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&[
            1.0 / self.r_diag[0],
            1.0 / self.r_diag[1],
        ]))
    }
}

#[derive(Debug, Error)]
pub enum LqrError {
    #[error("invalid weight: {what} (state weights must be >= 0, control weights > 0)")]
    BadWeights { what: String },
    #[error("reference needs at least two grid points")]
    EmptyReference,
    #[error("reference grid times must strictly increase (entry {index})")]
    ReferenceNotIncreasing { index: usize },
    #[error("reference shape mismatch: {times} grid times need {} control rows, got {controls}", times - 1)]
    ReferenceShape { times: usize, controls: usize },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("linearization failed at t = {t}: the constraint system is singular there")]
    Singular { t: f64 },
    #[error(
        "cost-to-go norm exceeded {cap:.1e} at t = {t:.4}; the reference interval around this time is not stabilizable with these weights"
    )]
    Blowup { t: f64, cap: f64 },
    #[error("cost-to-go lost positive semidefiniteness at t = {t:.4} (min eigenvalue {eig:.2e})")]
    NotPsd { t: f64, eig: f64 },
    #[error(transparent)]
    Sim(#[from] SimError),
}

// ---------------------------------------------------------------------------
// Reference trajectory
// ---------------------------------------------------------------------------

/// A reference to track: states on a time grid (linearly interpolated) and
/// piecewise-constant controls, one per grid interval, each held over
/// `(times[k], times[k+1]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub times: Vec<f64>,
    pub states: Vec<[f64; DIM_X]>,
    pub controls: Vec<[f64; 2]>,
}

impl Reference {
    pub fn from_decoded(d: &DecodedTrajectory) -> Self {
        Reference { times: d.times.clone(), states: d.states.clone(), controls: d.controls.clone() }
    }

    pub fn validate(&self) -> Result<(), LqrError> {
        if self.times.len() < 2 {
            return Err(LqrError::EmptyReference);
        }
        for (index, w) in self.times.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(LqrError::ReferenceNotIncreasing { index: index + 1 });
            }
        }
        if self.states.len() != self.times.len() || self.controls.len() + 1 != self.times.len() {
            return Err(LqrError::ReferenceShape {
                times: self.times.len(),
                controls: self.controls.len(),
            });
        }
        Ok(())
    }

    pub fn t_final(&self) -> f64 {
        *self.times.last().expect("validated reference has grid points")
    }

    /// Grid interval owning time `t` (left-continuous at grid points).
    fn interval_at(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&s| s < t);
        k.saturating_sub(1).min(self.controls.len().saturating_sub(1))
    }

    /// Linearly interpolated reference state, clamped to the grid range.
    pub fn state_at(&self, t: f64) -> [f64; DIM_X] {
        let k = self.interval_at(t);
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        std::array::from_fn(|j| (1.0 - w) * self.states[k][j] + w * self.states[k + 1][j])
    }

    /// Piecewise-constant reference control at time `t`.
    pub fn control_at(&self, t: f64) -> [f64; 2] {
        self.controls[self.interval_at(t)]
    }
}

// ---------------------------------------------------------------------------
// Jump sensitivity
// ---------------------------------------------------------------------------

/// Jacobian `H` of the jump displacement `g(x) - x` when `pattern_new` takes
/// over at state `x`. Position rows are identically zero (positions pass
/// through the reset); velocity rows carry the sensitivity of the projected
/// velocities.
pub fn jump_sensitivity(
    p: &PlantParams,
    pattern_new: ClutchPattern,
    x: &[f64; DIM_X],
) -> Result<[[f64; DIM_X]; DIM_X], SingularMatrix> {
    let seeds = Dual::<DIM_X>::seed(x);
    let g = reset_map(p, pattern_new, &seeds)?;
    Ok(std::array::from_fn(|i| {
        let mut row = g[i].eps;
        row[i] -= 1.0;
        row
    }))
}

/// Correction to the jump sensitivity when the switching instant depends on
/// the state, i.e. the switch fires where a guard `c(x) = 0` is crossed
/// rather than at an externally commanded time. The full sensitivity then
/// gains the rank-one term
///
/// ```text
/// (f_after(x+) - (I + H) f_before(x-)) grad_c' / (grad_c . f_before(x-))
/// ```
///
/// built from the flow mismatch across the switch and the guard gradient.
/// Clutch commands in this toolkit are time-triggered: the guard does not
/// depend on the state, its gradient is zero, and the term vanishes, so the
/// sweep never evaluates it. It is kept for schedules derived from state
/// conditions. Returns `None` at a grazing crossing (guard speed near zero),
/// where the sensitivity is undefined.
pub fn guard_jump_correction(
    flow_before: &[f64; DIM_X],
    flow_after: &[f64; DIM_X],
    h: &[[f64; DIM_X]; DIM_X],
    guard_grad: &[f64; DIM_X],
) -> Option<[[f64; DIM_X]; DIM_X]> {
    let speed: f64 = (0..DIM_X).map(|j| guard_grad[j] * flow_before[j]).sum();
    if speed.abs() < 1.0e-12 {
        return None;
    }
    let mismatch: [f64; DIM_X] = std::array::from_fn(|i| {
        let mut carried = flow_before[i];
        for j in 0..DIM_X {
            carried += h[i][j] * flow_before[j];
        }
        flow_after[i] - carried
    });
    Some(std::array::from_fn(|i| std::array::from_fn(|j| mismatch[i] * guard_grad[j] / speed)))
}

// ---------------------------------------------------------------------------
// Linearization
// ---------------------------------------------------------------------------

/// First-order expansion of the fixed-pattern dynamics at `(x, u)`:
/// `A = df/dx` (10 x 10) and `B = df/du` (10 x 2).
pub fn linearize(
    p: &PlantParams,
    pattern: ClutchPattern,
    x: &[f64; DIM_X],
    u: &[f64; 2],
) -> Result<(DMatrix<f64>, DMatrix<f64>), SingularMatrix> {
    let xs = Dual::<DIM_X>::seed(x);
    let uc = [Dual::constant(u[0]), Dual::constant(u[1])];
    let fx = vector_field(p, pattern, &xs, &uc)?;
    let mut a = DMatrix::zeros(DIM_X, DIM_X);
    for i in 0..DIM_X {
        for j in 0..DIM_X {
            a[(i, j)] = fx[i].eps[j];
        }
    }
    let us = Dual::<2>::seed(u);
    let xc = x.map(Dual::constant);
    let fu = vector_field(p, pattern, &xc, &us)?;
    let mut b = DMatrix::zeros(DIM_X, 2);
    for i in 0..DIM_X {
        for j in 0..2 {
            b[(i, j)] = fu[i].eps[j];
        }
    }
    Ok((a, b))
}

// ---------------------------------------------------------------------------
// Backward Riccati integration
// ---------------------------------------------------------------------------

/// Entry-norm cap beyond which the sweep reports a blow-up instead of
/// overflowing.
const P_NORM_CAP: f64 = 1.0e10;

struct RiccatiSystem<'a> {
    ab: &'a dyn Fn(f64) -> Result<(DMatrix<f64>, DMatrix<f64>), SingularMatrix>,
    q: &'a DMatrix<f64>,
    r_inv: &'a DMatrix<f64>,
    /// Integration runs in reversed time `s = t_end - t`.
    t_end: f64,
    dim: usize,
}

impl RiccatiSystem<'_> {
    fn unpack(&self, flat: &[f64]) -> DMatrix<f64> {
        let raw = DMatrix::from_row_slice(self.dim, self.dim, flat);
        // Read back onto the symmetric manifold so roundoff cannot drift the
        // flow off it.
        0.5 * (&raw + raw.transpose())
    }
}

impl OdeSystem for RiccatiSystem<'_> {
    fn dim(&self) -> usize {
        self.dim * self.dim
    }

    fn eval(&self, s: f64, flat: &[f64], out: &mut [f64]) -> Result<(), SimError> {
        let t = self.t_end - s;
        let (a, b) = (self.ab)(t).map_err(|SingularMatrix| SimError::Singular { t })?;
        let p = self.unpack(flat);
        let s_mat = &b * self.r_inv * b.transpose();
        // dP/ds = A'P + PA - P S P + Q (backward equation in forward time s).
        let d = a.transpose() * &p + &p * a - &p * s_mat * &p + self.q;
        for i in 0..self.dim {
            for j in 0..self.dim {
                out[i * self.dim + j] = d[(i, j)];
            }
        }
        Ok(())
    }
}

/// Integrate the matrix Riccati equation backward from the last grid time to
/// the first, returning the cost-to-go at every grid time (aligned with
/// `grid`, ascending). Dimension-generic so constant-coefficient cases can be
/// checked against closed-form solutions.
pub fn riccati_backward(
    ab: &dyn Fn(f64) -> Result<(DMatrix<f64>, DMatrix<f64>), SingularMatrix>,
    q: &DMatrix<f64>,
    r_inv: &DMatrix<f64>,
    p_end: &DMatrix<f64>,
    grid: &[f64],
    method: Method,
) -> Result<Vec<DMatrix<f64>>, LqrError> {
    assert!(grid.len() >= 2, "need at least the interval endpoints");
    let dim = p_end.nrows();
    let t_end = *grid.last().expect("grid checked non-empty");
    let sys = RiccatiSystem { ab, q, r_inv, t_end, dim };
    let mut flat: Vec<f64> = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        for j in 0..dim {
            flat.push(p_end[(i, j)]);
        }
    }
    let mut stats = IntegrationStats::default();
    let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(grid.len());
    out.push(p_end.clone());
    for w in grid.windows(2).rev() {
        let (s0, s1) = (t_end - w[1], t_end - w[0]);
        integrate(&sys, s0, s1, &mut flat, method, &mut stats).map_err(|e| match e {
            SimError::Singular { t } => LqrError::Singular { t },
            other => LqrError::Sim(other),
        })?;
        let p = sys.unpack(&flat);
        let norm = p.amax();
        if !norm.is_finite() || norm > P_NORM_CAP {
            return Err(LqrError::Blowup { t: w[0], cap: P_NORM_CAP });
        }
        let min_eig = p.clone().symmetric_eigenvalues().min();
        if min_eig < -1.0e-10 {
            return Err(LqrError::NotPsd { t: w[0], eig: min_eig });
        }
        out.push(p);
    }
    out.reverse();
    Ok(out)
}

// ---------------------------------------------------------------------------
// Gain schedule
// ---------------------------------------------------------------------------

/// Congruence record applied where a switch interrupts the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub t: f64,
    /// Row-major `DIM_X x DIM_X` Jacobian of the jump displacement.
    pub h: Vec<f64>,
    pub modes_after: [JointMode; 2],
}

/// Cost-to-go and gains over one switch-free interval `(t_start, t_end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSegment {
    pub t_start: f64,
    pub t_end: f64,
    pub modes: [JointMode; 2],
    pub times: Vec<f64>,
    /// Row-major `DIM_X x DIM_X` cost-to-go at each grid time.
    pub p: Vec<Vec<f64>>,
    /// Row-major `2 x DIM_X` feedback gain at each grid time.
    pub k: Vec<Vec<f64>>,
}

/// Piecewise gain schedule covering `[0, T]`, with one segment per
/// switch-free interval and the congruence jumps between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub segments: Vec<GainSegment>,
    pub jumps: Vec<JumpRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<ArtifactMeta>,
}

impl GainSchedule {
    pub fn t_final(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t_end)
    }

    /// Segment owning time `t` (left-continuous at switch times, matching
    /// the schedule convention).
    fn segment_at(&self, t: f64) -> &GainSegment {
        let k = self.segments.partition_point(|s| s.t_end < t);
        &self.segments[k.min(self.segments.len() - 1)]
    }

    /// Feedback gain at time `t`, interpolated linearly inside the owning
    /// segment and held constant beyond the schedule's range.
    pub fn gain_at(&self, t: f64) -> [[f64; DIM_X]; 2] {
        let seg = self.segment_at(t);
        let (w, i0, i1) = bracket(&seg.times, t);
        std::array::from_fn(|r| {
            std::array::from_fn(|c| {
                let at = r * DIM_X + c;
                (1.0 - w) * seg.k[i0][at] + w * seg.k[i1][at]
            })
        })
    }

    /// Cost-to-go at time `t` (same interpolation as [`Self::gain_at`]).
    pub fn cost_to_go_at(&self, t: f64) -> [[f64; DIM_X]; DIM_X] {
        let seg = self.segment_at(t);
        let (w, i0, i1) = bracket(&seg.times, t);
        std::array::from_fn(|r| {
            std::array::from_fn(|c| {
                let at = r * DIM_X + c;
                (1.0 - w) * seg.p[i0][at] + w * seg.p[i1][at]
            })
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("gain schedule serialization")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Interpolation weight and bracketing indices of `t` in ascending `times`.
fn bracket(times: &[f64], t: f64) -> (f64, usize, usize) {
    let hi = times.partition_point(|&s| s < t).clamp(1, times.len() - 1);
    let (t0, t1) = (times[hi - 1], times[hi]);
    let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
    (w, hi - 1, hi)
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

/// Sweep the tracking Riccati equation backward along the reference,
/// applying the congruence jump wherever the schedule switches. Cost-to-go
/// and gains are stored at the reference grid times of each interval (plus
/// the interval endpoints).
pub fn riccati_sweep(
    p: &PlantParams,
    reference: &Reference,
    schedule: &ModeSchedule,
    weights: &LqrWeights,
) -> Result<GainSchedule, LqrError> {
    weights.validate()?;
    reference.validate()?;
    let t_final = reference.t_final();
    schedule.validate(t_final)?;

    let q = weights.q_matrix();
    let r_inv = weights.r_inverse();
    let mut boundaries = vec![0.0];
    boundaries.extend(schedule.switch_times.iter().copied());
    boundaries.push(t_final);

    let mut p_cur = weights.p_t_matrix();
    let mut segments: Vec<GainSegment> = Vec::with_capacity(boundaries.len() - 1);
    let mut jumps: Vec<JumpRecord> = Vec::new();
    for w in boundaries.windows(2).rev() {
        let (lo, hi) = (w[0], w[1]);
        // The interval (lo, hi] belongs to the mode pair active at hi
        // (schedules are left-continuous at switch times).
        let pattern = schedule.pattern_at(hi);
        let ab = |t: f64| {
            let x = reference.state_at(t);
            let u = reference.control_at(t);
            linearize(p, pattern, &x, &u)
        };
        let mut grid = vec![lo];
        grid.extend(reference.times.iter().copied().filter(|&t| t > lo && t < hi));
        grid.push(hi);
        let ps = riccati_backward(&ab, &q, &r_inv, &p_cur, &grid, Method::default())?;
        let mut k_mats = Vec::with_capacity(grid.len());
        for (t, p_mat) in grid.iter().zip(&ps) {
            let (_, b) =
                ab(*t).map_err(|SingularMatrix| LqrError::Singular { t: *t })?;
            k_mats.push(row_major(&(&r_inv * b.transpose() * p_mat)));
        }
        segments.push(GainSegment {
            t_start: lo,
            t_end: hi,
            modes: pattern.modes(),
            times: grid,
            p: ps.iter().map(row_major).collect(),
            k: k_mats,
        });
        p_cur = ps[0].clone();
        if lo > 0.0 {
            // Crossing the switch at lo backward: the pattern that begins
            // here resets the state, so the cost-to-go seen from the earlier
            // interval is the congruence through that reset's jump Jacobian.
            let x_switch = reference.state_at(lo);
            let h = jump_sensitivity(p, pattern, &x_switch)
                .map_err(|SingularMatrix| LqrError::Singular { t: lo })?;
            let mut i_plus_h: DMatrix<f64> = DMatrix::identity(DIM_X, DIM_X);
            for i in 0..DIM_X {
                for j in 0..DIM_X {
                    i_plus_h[(i, j)] += h[i][j];
                }
            }
            p_cur = i_plus_h.transpose() * p_cur * &i_plus_h;
            jumps.push(JumpRecord {
                t: lo,
                h: h.iter().flatten().copied().collect(),
                modes_after: pattern.modes(),
            });
        }
    }
    segments.reverse();
    jumps.reverse();
    Ok(GainSchedule { segments, jumps, meta: None })
}

// ---------------------------------------------------------------------------
// Feedback and closed-loop rollout
// ---------------------------------------------------------------------------

/// Tracking control at time `t`: reference feedforward plus the LQR
/// correction, clamped to the motor-rate box.
pub fn feedback(
    x: &[f64; DIM_X],
    t: f64,
    reference: &Reference,
    gains: &GainSchedule,
    weights: &LqrWeights,
    u_max: f64,
) -> [f64; 2] {
    let x_ref = reference.state_at(t);
    let u_ref = reference.control_at(t);
    let k = gains.gain_at(t);
    let mut err: [f64; DIM_X] = std::array::from_fn(|j| x[j] - x_ref[j]);
    if weights.elastic_only {
        err[0] = 0.0;
        err[1] = 0.0;
    }
    std::array::from_fn(|j| {
        let correction: f64 = (0..DIM_X).map(|i| k[j][i] * err[i]).sum();
        (u_ref[j] - correction).clamp(-u_max, u_max)
    })
}

/// Closed-loop rollout: the reference's schedule is applied open-loop (switch
/// times are commanded, not replanned), with the control supplied by
/// [`feedback`] at every integrator evaluation.
pub fn track(
    p: &PlantParams,
    x0: &HybridState,
    reference: &Reference,
    schedule: &ModeSchedule,
    gains: &GainSchedule,
    weights: &LqrWeights,
) -> Result<Rollout, SimError> {
    let control =
        |t: f64, x: &[f64; DIM_X]| feedback(x, t, reference, gains, weights, p.u_max);
    rollout(
        p,
        schedule,
        x0,
        &control,
        reference.t_final(),
        &reference.times,
        Method::default(),
    )
}

// ---------------------------------------------------------------------------
// Tracking-error artifact
// ---------------------------------------------------------------------------

pub const TRACKING_SCHEMA: &str = "ceropt.tracking.v1";

/// Per-sample tracking error against the reference, as CSV: full-state error
/// norm, link-angle errors, and the commanded tip speed for context.
pub fn tracking_to_csv(
    roll: &Rollout,
    reference: &Reference,
    config_hash: &str,
    seed: u64,
) -> String {
    let mut out = csv_preamble(TRACKING_SCHEMA, config_hash, seed);
    out.push_str("t,err_norm,err_q1,err_q2,v_ee\n");
    for s in &roll.samples {
        let x = s.state.to_array();
        let x_ref = reference.state_at(s.t);
        let err: f64 =
            (0..DIM_X).map(|j| (x[j] - x_ref[j]) * (x[j] - x_ref[j])).sum::<f64>().sqrt();
        let eq1 = x[4] - x_ref[4];
        let eq2 = x[5] - x_ref[5];
        out.push_str(&format!("{},{},{},{},{}\n", s.t, err, eq1, eq2, s.ee_speed));
    }
    out
}

/// Largest state error between a rollout and the reference over all samples.
pub fn max_tracking_error(roll: &Rollout, reference: &Reference) -> f64 {
    roll.samples
        .iter()
        .map(|s| {
            let x = s.state.to_array();
            let x_ref = reference.state_at(s.t);
            (0..DIM_X).map(|j| (x[j] - x_ref[j]) * (x[j] - x_ref[j])).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max)
}

/// State error at the final sample.
pub fn final_tracking_error(roll: &Rollout, reference: &Reference) -> f64 {
    let s = roll.samples.last().expect("rollout records at least the initial sample");
    let x = s.state.to_array();
    let x_ref = reference.state_at(s.t);
    (0..DIM_X).map(|j| (x[j] - x_ref[j]) * (x[j] - x_ref[j])).sum::<f64>().sqrt()
}
