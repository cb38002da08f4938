//! State conventions.
//!
//! The packed state vector used by integrators, linearizations, and the
//! transcription is
//!
//! ```text
//! x = (theta_1, theta_2, psi_1, psi_2, q_1, q_2, dpsi_1, dpsi_2, dq_1, dq_2)
//! ```
//!
//! i.e. motor positions, then the elastic coordinates xi = (psi, q), then
//! xi_dot. Motor velocity is the control input, so no motor rate appears in
//! the state.

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;

pub const N_JOINTS: usize = 2;
/// Dimension of the elastic coordinate block xi = (psi_1, psi_2, q_1, q_2).
pub const DIM_XI: usize = 4;
/// Dimension of the packed state vector.
pub const DIM_X: usize = 10;

/// Named view of the packed state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HybridState {
    /// Motor positions (rad).
    pub theta: [f64; 2],
    /// Spring-side positions (rad).
    pub psi: [f64; 2],
    /// Link positions (rad), zero hanging straight down.
    pub q: [f64; 2],
    /// Spring-side velocities (rad/s).
    pub psi_dot: [f64; 2],
    /// Link velocities (rad/s).
    pub q_dot: [f64; 2],
}

impl HybridState {
    pub fn to_array(&self) -> [f64; DIM_X] {
        [
            self.theta[0],
            self.theta[1],
            self.psi[0],
            self.psi[1],
            self.q[0],
            self.q[1],
            self.psi_dot[0],
            self.psi_dot[1],
            self.q_dot[0],
            self.q_dot[1],
        ]
    }

    pub fn from_array(x: &[f64; DIM_X]) -> Self {
        HybridState {
            theta: [x[0], x[1]],
            psi: [x[2], x[3]],
            q: [x[4], x[5]],
            psi_dot: [x[6], x[7]],
            q_dot: [x[8], x[9]],
        }
    }

    /// Elastic coordinates (psi_1, psi_2, q_1, q_2).
    pub fn xi(&self) -> [f64; DIM_XI] {
        [self.psi[0], self.psi[1], self.q[0], self.q[1]]
    }

    /// Elastic velocities (dpsi_1, dpsi_2, dq_1, dq_2).
    pub fn xi_dot(&self) -> [f64; DIM_XI] {
        [self.psi_dot[0], self.psi_dot[1], self.q_dot[0], self.q_dot[1]]
    }

    /// Spring deflections theta - psi per joint.
    pub fn deflection(&self) -> [f64; 2] {
        [self.theta[0] - self.psi[0], self.theta[1] - self.psi[1]]
    }
}

/// Split a packed state into (theta, xi, xi_dot), generically over the scalar.
pub fn split_state<T: Real>(x: &[T; DIM_X]) -> ([T; 2], [T; DIM_XI], [T; DIM_XI]) {
    ([x[0], x[1]], [x[2], x[3], x[4], x[5]], [x[6], x[7], x[8], x[9]])
}

/// Assemble a packed state from its blocks.
pub fn join_state<T: Real>(theta: &[T; 2], xi: &[T; DIM_XI], xi_dot: &[T; DIM_XI]) -> [T; DIM_X] {
    [
        theta[0], theta[1], xi[0], xi[1], xi[2], xi[3], xi_dot[0], xi_dot[1], xi_dot[2], xi_dot[3],
    ]
}
