//! Discrete actuation modes and clutch patterns.
//!
//! Each joint has a brake (locks the spring inertia to the housing) and a
//! clutch (couples the spring inertia to the link). Four per-joint modes
//! arise:
//!
//! | mode | brake | clutch | behavior |
//! |------|-------|--------|----------|
//! | DEC  | open  | open   | link ballistic, spring idles |
//! | SEA  | open  | closed | series-elastic transmission |
//! | STG  | closed| open   | spring winds against ground, link free |
//! | BRK  | closed| closed | joint fully locked |
//!
//! Engagements are velocity-level constraints `phi_i = Gamma_i xi_dot = 0`
//! with constant rows `Gamma_i`. The four rows, in canonical order, constrain
//! dpsi_1, dpsi_1 - dq_1, dpsi_2, dpsi_2 - dq_2. A [`ClutchPattern`] is any
//! of the 16 subsets of engaged rows and maps one-to-one onto mode pairs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifacts::ArtifactMeta;
use crate::autodiff::Real;
use crate::state::DIM_XI;

/// Number of engageable constraint rows (brake and clutch per joint).
pub const N_CONSTRAINTS: usize = 4;

/// Constant velocity-constraint rows; row i constrains `GAMMA[i] . xi_dot`.
pub const GAMMA: [[f64; DIM_XI]; N_CONSTRAINTS] = [
    [1.0, 0.0, 0.0, 0.0],
    [1.0, 0.0, -1.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, -1.0],
];

/// Relative speeds phi = Gamma xi_dot across all four engageable interfaces.
pub fn relative_speeds<T: Real>(xi_dot: &[T; DIM_XI]) -> [T; N_CONSTRAINTS] {
    [
        xi_dot[0],
        xi_dot[0] - xi_dot[2],
        xi_dot[1],
        xi_dot[1] - xi_dot[3],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JointMode {
    #[serde(rename = "DEC")]
    Dec,
    #[serde(rename = "SEA")]
    Sea,
    #[serde(rename = "STG")]
    Stg,
    #[serde(rename = "BRK")]
    Brk,
}

impl JointMode {
    pub fn label(self) -> &'static str {
        match self {
            JointMode::Dec => "DEC",
            JointMode::Sea => "SEA",
            JointMode::Stg => "STG",
            JointMode::Brk => "BRK",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "DEC" => Some(JointMode::Dec),
            "SEA" => Some(JointMode::Sea),
            "STG" => Some(JointMode::Stg),
            "BRK" => Some(JointMode::Brk),
            _ => None,
        }
    }

    fn flags(self) -> (bool, bool) {
        match self {
            JointMode::Dec => (false, false),
            JointMode::Sea => (false, true),
            JointMode::Stg => (true, false),
            JointMode::Brk => (true, true),
        }
    }

    fn from_flags(brake: bool, clutch: bool) -> Self {
        match (brake, clutch) {
            (false, false) => JointMode::Dec,
            (false, true) => JointMode::Sea,
            (true, false) => JointMode::Stg,
            (true, true) => JointMode::Brk,
        }
    }
}

/// One of the 16 engagement subsets. `engaged[i]` says whether constraint row
/// `GAMMA[i]` is active: index 0 is joint 1's brake, 1 its clutch, 2 joint
/// 2's brake, 3 its clutch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ClutchPattern {
    pub engaged: [bool; N_CONSTRAINTS],
}

impl ClutchPattern {
    pub fn from_modes(modes: [JointMode; 2]) -> Self {
        let (b1, c1) = modes[0].flags();
        let (b2, c2) = modes[1].flags();
        ClutchPattern { engaged: [b1, c1, b2, c2] }
    }

    pub fn modes(&self) -> [JointMode; 2] {
        [
            JointMode::from_flags(self.engaged[0], self.engaged[1]),
            JointMode::from_flags(self.engaged[2], self.engaged[3]),
        ]
    }

    /// All 16 patterns in a fixed enumeration order.
    pub fn all() -> [ClutchPattern; 16] {
        std::array::from_fn(|bits| ClutchPattern {
            engaged: std::array::from_fn(|i| bits >> i & 1 == 1),
        })
    }

    pub fn num_engaged(&self) -> usize {
        self.engaged.iter().filter(|&&e| e).count()
    }

    /// Stacked rows of the active constraint Jacobian, padded with zero rows;
    /// the second value is the number of valid rows.
    pub fn constraint_rows(&self) -> ([[f64; DIM_XI]; N_CONSTRAINTS], usize) {
        let mut rows = [[0.0; DIM_XI]; N_CONSTRAINTS];
        let mut count = 0;
        for i in 0..N_CONSTRAINTS {
            if self.engaged[i] {
                rows[count] = GAMMA[i];
                count += 1;
            }
        }
        (rows, count)
    }

    /// Indices into [`GAMMA`] of the engaged rows, in canonical order.
    pub fn engaged_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..N_CONSTRAINTS).filter(|&i| self.engaged[i])
    }

    pub fn is_free(&self) -> bool {
        self.num_engaged() == 0
    }
}

/// Smooth indicator of impulse transfer through an interface: +1/2 when the
/// transmitted torque is zero, approaching -1/2 as |torque| grows. The
/// product of successive indicator values flips sign exactly when the
/// interface switches between transmitting and idle, which is what the
/// switch-count objective term detects.
pub fn engagement_indicator<T: Real>(torque: T, alpha: f64) -> T {
    (-(torque * torque).scale(alpha)).exp() - T::from_f64(0.5)
}

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("schedule needs exactly one more mode entry than switch times (got {modes} modes, {switches} switches)")]
    LengthMismatch { modes: usize, switches: usize },
    #[error("switch times must be strictly increasing (violated at entry {index})")]
    NotIncreasing { index: usize },
    #[error("switch time {value} lies outside the open horizon (0, {t_final})")]
    OutOfHorizon { value: f64, t_final: f64 },
}

/// Piecewise-constant mode assignment over a horizon. Interval k runs from
/// `switch_times[k-1]` (exclusive) to `switch_times[k]` (inclusive), with the
/// first interval starting at 0 inclusive; a state sampled exactly at a
/// switch time belongs to the interval ending there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSchedule {
    pub switch_times: Vec<f64>,
    pub modes: Vec<[JointMode; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<ArtifactMeta>,
}

impl ModeSchedule {
    /// A single mode pair over the whole horizon.
    pub fn constant(modes: [JointMode; 2]) -> Self {
        ModeSchedule { switch_times: Vec::new(), modes: vec![modes], meta: None }
    }

    pub fn validate(&self, t_final: f64) -> Result<(), ScheduleError> {
        if self.modes.len() != self.switch_times.len() + 1 {
            return Err(ScheduleError::LengthMismatch {
                modes: self.modes.len(),
                switches: self.switch_times.len(),
            });
        }
        for (i, w) in self.switch_times.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(ScheduleError::NotIncreasing { index: i + 1 });
            }
        }
        for &t in &self.switch_times {
            if !(t > 0.0 && t < t_final) {
                return Err(ScheduleError::OutOfHorizon { value: t, t_final });
            }
        }
        Ok(())
    }

    /// Index of the interval containing time `t` (left-continuous at
    /// switches).
    pub fn interval_at(&self, t: f64) -> usize {
        self.switch_times.partition_point(|&s| s < t)
    }

    pub fn modes_at(&self, t: f64) -> [JointMode; 2] {
        self.modes[self.interval_at(t)]
    }

    pub fn pattern_at(&self, t: f64) -> ClutchPattern {
        ClutchPattern::from_modes(self.modes_at(t))
    }

    pub fn to_json(&self) -> String {
        // Serialization of this struct cannot fail: every field is plain data.
        serde_json::to_string_pretty(self).expect("schedule serialization")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Reconstruct a mode schedule from per-step interface torques and relative
/// speeds on a uniform grid of step length `delta` (step k covers the
/// interval ((k-1) delta, k delta]).
///
/// An interface counts as engaged during a step when it transmits meaningful
/// torque, or when it transmitted during the previous step and the relative
/// speed is still pinned near zero (an engaged interface that happens to
/// carry no load at that instant). The latch breaks as soon as the relative
/// speed comes loose, which is what distinguishes release from an idle
/// engagement.
pub fn extract_schedule(
    torque: &[[f64; N_CONSTRAINTS]],
    phi: &[[f64; N_CONSTRAINTS]],
    delta: f64,
    torque_eps: f64,
    speed_eps: f64,
) -> ModeSchedule {
    assert_eq!(torque.len(), phi.len(), "torque and speed trajectories must align");
    assert!(!torque.is_empty(), "need at least one step to extract a schedule");
    let mut engaged_prev = [false; N_CONSTRAINTS];
    let mut patterns: Vec<ClutchPattern> = Vec::with_capacity(torque.len());
    for k in 0..torque.len() {
        let mut engaged = [false; N_CONSTRAINTS];
        for i in 0..N_CONSTRAINTS {
            let transmitting = torque[k][i].abs() > torque_eps;
            let latched = engaged_prev[i] && phi[k][i].abs() < speed_eps;
            engaged[i] = transmitting || latched;
        }
        patterns.push(ClutchPattern { engaged });
        engaged_prev = engaged;
    }
    let mut switch_times = Vec::new();
    let mut modes = vec![patterns[0].modes()];
    for k in 1..patterns.len() {
        if patterns[k] != patterns[k - 1] {
            switch_times.push(k as f64 * delta);
            modes.push(patterns[k].modes());
        }
    }
    ModeSchedule { switch_times, modes, meta: None }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_patterns_map_bijectively_to_mode_pairs() {
        let patterns = ClutchPattern::all();
        let mut seen = std::collections::HashSet::new();
        for p in patterns {
            let modes = p.modes();
            assert_eq!(ClutchPattern::from_modes(modes), p);
            assert!(seen.insert(modes.map(|m| m.label())));
        }
        assert_eq!(seen.len(), 16);
    }

    #[test]
    fn mode_constraint_rows() {
        let sea_stg = ClutchPattern::from_modes([JointMode::Sea, JointMode::Stg]);
        assert_eq!(sea_stg.engaged, [false, true, true, false]);
        let (rows, count) = sea_stg.constraint_rows();
        assert_eq!(count, 2);
        assert_eq!(rows[0], [1.0, 0.0, -1.0, 0.0]);
        assert_eq!(rows[1], [0.0, 1.0, 0.0, 0.0]);
        assert!(ClutchPattern::from_modes([JointMode::Dec, JointMode::Dec]).is_free());
        assert_eq!(ClutchPattern::from_modes([JointMode::Brk, JointMode::Brk]).num_engaged(), 4);
    }

    #[test]
    fn relative_speeds_read_off_velocities() {
        let phi = relative_speeds(&[1.0, 2.0, 3.0, 5.0]);
        assert_eq!(phi, [1.0, -2.0, 2.0, -3.0]);
    }

    #[test]
    fn indicator_limits_and_symmetry() {
        assert_eq!(engagement_indicator(0.0, 100.0), 0.5);
        assert!(engagement_indicator(1.0, 100.0) < -0.49);
        assert_eq!(engagement_indicator(0.3, 100.0), engagement_indicator(-0.3, 100.0));
    }

    #[test]
    fn schedule_lookup_is_left_continuous() {
        let s = ModeSchedule {
            switch_times: vec![0.1, 0.3],
            modes: vec![
                [JointMode::Sea, JointMode::Stg],
                [JointMode::Dec, JointMode::Sea],
                [JointMode::Brk, JointMode::Dec],
            ],
            meta: None,
        };
        s.validate(0.5).unwrap();
        assert_eq!(s.modes_at(0.0), [JointMode::Sea, JointMode::Stg]);
        assert_eq!(s.modes_at(0.1), [JointMode::Sea, JointMode::Stg]);
        assert_eq!(s.modes_at(0.10001), [JointMode::Dec, JointMode::Sea]);
        assert_eq!(s.modes_at(0.3), [JointMode::Dec, JointMode::Sea]);
        assert_eq!(s.modes_at(0.5), [JointMode::Brk, JointMode::Dec]);
    }

    #[test]
    fn schedule_validation_catches_misuse() {
        let mut s = ModeSchedule::constant([JointMode::Dec, JointMode::Dec]);
        s.validate(1.0).unwrap();
        s.switch_times = vec![0.2];
        assert!(matches!(s.validate(1.0), Err(ScheduleError::LengthMismatch { .. })));
        s.modes.push([JointMode::Sea, JointMode::Sea]);
        s.switch_times = vec![1.5];
        assert!(matches!(s.validate(1.0), Err(ScheduleError::OutOfHorizon { .. })));
        s.switch_times = vec![0.2];
        s.modes.push([JointMode::Stg, JointMode::Stg]);
        s.switch_times = vec![0.3, 0.3];
        assert!(matches!(s.validate(1.0), Err(ScheduleError::NotIncreasing { .. })));
    }

    #[test]
    fn schedule_json_round_trip_and_external_shape() {
        let s = ModeSchedule {
            switch_times: vec![0.41],
            modes: vec![[JointMode::Sea, JointMode::Stg], [JointMode::Dec, JointMode::Sea]],
            meta: None,
        };
        let text = s.to_json();
        assert_eq!(ModeSchedule::from_json(&text).unwrap(), s);
        // Hand-written schedules use bare mode labels and no meta block.
        let external = r#"{"switch_times": [0.41], "modes": [["SEA","STG"], ["DEC","SEA"]]}"#;
        assert_eq!(ModeSchedule::from_json(external).unwrap(), s);
    }

    #[test]
    fn extraction_detects_engagement_and_release() {
        let delta = 0.1;
        // Interface 1 transmits for two steps, goes quiet while still pinned
        // (latched), then the speed comes loose: disengaged.
        let torque = [
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0],
        ];
        let phi = [
            [0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0],
            [0.0, 0.5, 0.0, 0.0],
        ];
        let s = extract_schedule(&torque, &phi, delta, 1e-3, 1e-3);
        assert_eq!(s.modes[0], [JointMode::Sea, JointMode::Dec]);
        assert_eq!(s.switch_times.len(), 1);
        assert!((s.switch_times[0] - 3.0 * delta).abs() < 1e-15);
        assert_eq!(s.modes[1], [JointMode::Dec, JointMode::Dec]);
    }

    #[test]
    fn extraction_is_scale_robust_around_threshold() {
        let delta = 0.005;
        let base = [[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0; 4]];
        let loose_phi = [[0.0, 0.0, 1.0, 0.0]; 3];
        for scale in [1.0, 10.0, 1000.0] {
            let torque: Vec<[f64; 4]> =
                base.iter().map(|r| r.map(|v| v * scale)).collect();
            let s = extract_schedule(&torque, &loose_phi, delta, 1e-3, 1e-3);
            assert_eq!(s.modes[0], [JointMode::Dec, JointMode::Stg]);
            assert_eq!(s.switch_times.len(), 1);
            assert!((s.switch_times[0] - 2.0 * delta).abs() < 1e-15);
        }
    }
}
