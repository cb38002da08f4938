//! Continuous dynamics of the reduced actuator-link model.
//!
//! Motors are velocity-controlled and kinematically decoupled from the
//! elastic substructure, so the dynamic state is the elastic coordinate block
//! xi = (psi_1, psi_2, q_1, q_2) with
//!
//! ```text
//! Pi(xi) xi_ddot + eta(xi, xi_dot) + tau_f(xi_dot) = tau(theta, psi) + Gp^T lambda
//! ```
//!
//! where `Pi = blkdiag(diag(B_psi), M(q))` collects spring-side and link
//! inertias, `eta` stacks zeros over the link-side Coriolis and gravity bias,
//! `tau_f` is smooth Coulomb-plus-viscous friction (dissipative by
//! construction), and `tau` applies the series-spring torque to the spring
//! inertias. The link side feels the springs only through a closed clutch,
//! which enters as constraint forces `Gp^T lambda` handled in [`crate::sim`].
//!
//! Everything is generic over the scalar type so the same code paths serve
//! simulation and derivative extraction.

use crate::autodiff::Real;
use crate::params::PlantParams;
use crate::state::{HybridState, DIM_XI};

/// Velocity scale of the smooth Coulomb model, tanh(v / V_SMOOTH) (rad/s).
pub const V_SMOOTH: f64 = 0.01;

/// All pieces of the elastic-block equation of motion at one evaluation point.
#[derive(Debug, Clone, Copy)]
pub struct ModelEval<T> {
    /// Block-diagonal inertia: diag(B_psi_1, B_psi_2) over M(q).
    pub pi: [[T; DIM_XI]; DIM_XI],
    /// Bias torques (0, 0, Coriolis + gravity on the links).
    pub eta: [T; DIM_XI],
    /// Applied torques: spring torque on the spring inertias, zero on links.
    pub tau: [T; DIM_XI],
    /// Friction torques, resisting motion coordinate-wise.
    pub tau_f: [T; DIM_XI],
}

/// Link-side mass matrix of the planar two-link chain.
pub fn mass_matrix<T: Real>(p: &PlantParams, q: &[T; 2]) -> [[T; 2]; 2] {
    let j1 = p.link_inertia_about_joint(0);
    let j2 = p.link_inertia_about_joint(1);
    let coupling = p.m_link[1] * p.l_link[0] * p.r_link[1];
    let c2 = q[1].cos();
    let m12 = c2.scale(coupling) + T::from_f64(j2);
    let m11 = c2.scale(2.0 * coupling)
        + T::from_f64(j1 + j2 + p.m_link[1] * p.l_link[0] * p.l_link[0]);
    [[m11, m12], [m12, T::from_f64(j2)]]
}

/// Link-side bias torque h(q, q_dot) = C(q, q_dot) q_dot + g(q).
pub fn link_bias<T: Real>(p: &PlantParams, q: &[T; 2], q_dot: &[T; 2]) -> [T; 2] {
    let coupling = p.m_link[1] * p.l_link[0] * p.r_link[1];
    let hc = -q[1].sin().scale(coupling);
    let coriolis_1 = hc * (q_dot[0].scale(2.0) + q_dot[1]) * q_dot[1];
    let coriolis_2 = -hc * q_dot[0] * q_dot[0];
    let g = gravity_torque(p, q);
    [coriolis_1 + g[0], coriolis_2 + g[1]]
}

/// Gravity torque on the links; zero in the hanging configuration q = 0.
pub fn gravity_torque<T: Real>(p: &PlantParams, q: &[T; 2]) -> [T; 2] {
    let a1 = (p.m_link[0] * p.r_link[0] + p.m_link[1] * p.l_link[0]) * p.gravity;
    let a2 = p.m_link[1] * p.r_link[1] * p.gravity;
    let s1 = q[0].sin();
    let s12 = (q[0] + q[1]).sin();
    [s1.scale(a1) + s12.scale(a2), s12.scale(a2)]
}

/// Series-spring torques k (theta - psi) per joint.
pub fn spring_torque<T: Real>(p: &PlantParams, theta: &[T; 2], psi: &[T; 2]) -> [T; 2] {
    [
        (theta[0] - psi[0]).scale(p.k_spring[0]),
        (theta[1] - psi[1]).scale(p.k_spring[1]),
    ]
}

/// Smooth Coulomb plus viscous friction on each elastic coordinate. The
/// returned torque opposes motion, so `xi_dot . tau_f >= 0` for every
/// velocity.
pub fn friction<T: Real>(p: &PlantParams, xi_dot: &[T; DIM_XI]) -> [T; DIM_XI] {
    let one_component = |v: T, tau_c: f64, d: f64| -> T {
        v.scale(1.0 / V_SMOOTH).tanh().scale(tau_c) + v.scale(d)
    };
    [
        one_component(xi_dot[0], p.tau_c_psi[0], p.d_psi[0]),
        one_component(xi_dot[1], p.tau_c_psi[1], p.d_psi[1]),
        one_component(xi_dot[2], p.tau_c_q[0], p.d_q[0]),
        one_component(xi_dot[3], p.tau_c_q[1], p.d_q[1]),
    ]
}

/// Evaluate every term of the elastic-block equation of motion.
pub fn eval_model<T: Real>(
    p: &PlantParams,
    theta: &[T; 2],
    xi: &[T; DIM_XI],
    xi_dot: &[T; DIM_XI],
) -> ModelEval<T> {
    let q = [xi[2], xi[3]];
    let q_dot = [xi_dot[2], xi_dot[3]];
    let m = mass_matrix(p, &q);
    let mut pi = [[T::zero(); DIM_XI]; DIM_XI];
    pi[0][0] = T::from_f64(p.b_psi[0]);
    pi[1][1] = T::from_f64(p.b_psi[1]);
    for i in 0..2 {
        for j in 0..2 {
            pi[2 + i][2 + j] = m[i][j];
        }
    }
    let h = link_bias(p, &q, &q_dot);
    let eta = [T::zero(), T::zero(), h[0], h[1]];
    let psi = [xi[0], xi[1]];
    let ts = spring_torque(p, theta, &psi);
    let tau = [ts[0], ts[1], T::zero(), T::zero()];
    let tau_f = friction(p, xi_dot);
    ModelEval { pi, eta, tau, tau_f }
}

/// End-effector position in the plane; x horizontal, y vertical (up), arm
/// hanging at q = 0 with the tip at (0, -(l_1 + l_2)).
pub fn ee_position<T: Real>(p: &PlantParams, q: &[T; 2]) -> [T; 2] {
    let q12 = q[0] + q[1];
    [
        q[0].sin().scale(p.l_link[0]) + q12.sin().scale(p.l_link[1]),
        -(q[0].cos().scale(p.l_link[0]) + q12.cos().scale(p.l_link[1])),
    ]
}

/// Translational end-effector Jacobian d(ee_position)/dq.
pub fn ee_jacobian<T: Real>(p: &PlantParams, q: &[T; 2]) -> [[T; 2]; 2] {
    let q12 = q[0] + q[1];
    let a = q[0].cos().scale(p.l_link[0]);
    let b = q12.cos().scale(p.l_link[1]);
    let c = q[0].sin().scale(p.l_link[0]);
    let d = q12.sin().scale(p.l_link[1]);
    [[a + b, b], [c + d, d]]
}

/// Cartesian end-effector velocity.
pub fn ee_velocity<T: Real>(p: &PlantParams, q: &[T; 2], q_dot: &[T; 2]) -> [T; 2] {
    let jac = ee_jacobian(p, q);
    [
        jac[0][0] * q_dot[0] + jac[0][1] * q_dot[1],
        jac[1][0] * q_dot[0] + jac[1][1] * q_dot[1],
    ]
}

/// Squared end-effector speed, the quantity the launch objective maximizes.
pub fn ee_speed_squared<T: Real>(p: &PlantParams, q: &[T; 2], q_dot: &[T; 2]) -> T {
    let v = ee_velocity(p, q, q_dot);
    v[0] * v[0] + v[1] * v[1]
}

/// Gravitational potential, normalized to zero at the hanging rest pose.
pub fn potential_energy<T: Real>(p: &PlantParams, q: &[T; 2]) -> T {
    let a1 = (p.m_link[0] * p.r_link[0] + p.m_link[1] * p.l_link[0]) * p.gravity;
    let a2 = p.m_link[1] * p.r_link[1] * p.gravity;
    (T::one() - q[0].cos()).scale(a1) + (T::one() - (q[0] + q[1]).cos()).scale(a2)
}

/// Total mechanical energy: elastic-block kinetic energy, spring potential,
/// and gravitational potential. Motor kinetic energy is excluded because the
/// velocity-source reduction removes the motor from the force balance.
pub fn total_energy(p: &PlantParams, s: &HybridState) -> f64 {
    let xi = s.xi();
    let xi_dot = s.xi_dot();
    let eval = eval_model(p, &s.theta, &xi, &xi_dot);
    let mut kinetic = 0.0;
    for i in 0..DIM_XI {
        for j in 0..DIM_XI {
            kinetic += 0.5 * xi_dot[i] * eval.pi[i][j] * xi_dot[j];
        }
    }
    let defl = s.deflection();
    let spring = 0.5 * p.k_spring[0] * defl[0] * defl[0] + 0.5 * p.k_spring[1] * defl[1] * defl[1];
    kinetic + spring + potential_energy(p, &s.q)
}
