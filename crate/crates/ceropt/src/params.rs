//! Physical parameters of the two-joint clutched-elastic arm.
//!
//! Each joint carries a motor inertia, a spring-side inertia that can be
//! braked to the housing or clutched to the link, and a link body hanging in
//! gravity. Defaults describe the reference hardware; every field can be
//! overridden from a TOML table (unknown keys are rejected so typos surface
//! as config errors rather than silently running the defaults).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Per-joint pair, indexed proximal (shoulder) then distal (elbow).
pub type Pair = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantParams {
    /// Motor-side rotor inertias (kg m^2). Retained for context; the reduced
    /// model commands motor velocity directly, so these never enter the
    /// dynamics.
    pub b_theta: Pair,
    /// Spring-side inertias between clutch and brake (kg m^2).
    pub b_psi: Pair,
    /// Link inertias about their own centers of mass (kg m^2).
    pub b_link: Pair,
    /// Link masses (kg).
    pub m_link: Pair,
    /// Distances from joint axis to link center of mass (m).
    pub r_link: Pair,
    /// Kinematic link lengths joint-to-joint and joint-to-tip (m). These are
    /// not part of the identified inertial data; the defaults are a plausible
    /// arm geometry consistent with the center-of-mass offsets, and anything
    /// downstream that depends on end-effector quantities inherits this
    /// choice. Override them in the config when the real geometry is known.
    pub l_link: Pair,
    /// Series spring stiffnesses (N m / rad).
    pub k_spring: Pair,
    /// Coulomb friction levels at the link joints (N m).
    pub tau_c_q: Pair,
    /// Viscous friction at the link joints (N m s / rad).
    pub d_q: Pair,
    /// Coulomb friction levels on the spring inertias (N m).
    pub tau_c_psi: Pair,
    /// Viscous friction on the spring inertias (N m s / rad).
    pub d_psi: Pair,
    /// Gravitational acceleration (m/s^2); the arm hangs straight down at
    /// q = 0.
    pub gravity: f64,
    /// Motor position limit, symmetric (rad).
    pub theta_max: f64,
    /// Spring deflection limit |theta - psi|, symmetric (rad).
    pub phi_max: f64,
    /// Spring torque limits |k (theta - psi)| (N m).
    pub tau_s_max: Pair,
    /// Motor velocity limit, symmetric (rad/s).
    pub u_max: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        PlantParams {
            b_theta: [2.38e-5, 2.38e-5],
            b_psi: [6.20e-4, 6.15e-4],
            b_link: [1.12e-1, 4.4e-3],
            m_link: [9.92, 9.5e-1],
            r_link: [9.87e-2, 1.74e-1],
            l_link: [0.25, 0.35],
            k_spring: [12.5, 14.5],
            tau_c_q: [0.2, 0.6],
            d_q: [0.1, 0.08],
            tau_c_psi: [0.2, 0.2],
            d_psi: [0.1, 0.1],
            gravity: 9.81,
            theta_max: 1.2,
            phi_max: 0.3,
            tau_s_max: [3.75, 4.35],
            u_max: 4.5,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("parameter {name}[{index}] must be strictly positive, got {value}")]
    NonPositive { name: &'static str, index: usize, value: f64 },
    #[error("parameter {name} must be strictly positive, got {value}")]
    NonPositiveScalar { name: &'static str, value: f64 },
    #[error("parameter {name}[{index}] must be non-negative and finite, got {value}")]
    BadFriction { name: &'static str, index: usize, value: f64 },
    #[error("parameter {name} is not finite")]
    NonFinite { name: &'static str },
}

impl PlantParams {
    /// Check physical plausibility. Inertias, masses, stiffnesses, geometry,
    /// and limits must be strictly positive; friction coefficients must be
    /// non-negative. Gravity may be any finite value (zero turns gravity off,
    /// which the tests use).
    pub fn validate(&self) -> Result<(), ParamError> {
        let strictly_positive: [(&'static str, &Pair); 8] = [
            ("b_theta", &self.b_theta),
            ("b_psi", &self.b_psi),
            ("b_link", &self.b_link),
            ("m_link", &self.m_link),
            ("r_link", &self.r_link),
            ("l_link", &self.l_link),
            ("k_spring", &self.k_spring),
            ("tau_s_max", &self.tau_s_max),
        ];
        for (name, pair) in strictly_positive {
            for (index, &value) in pair.iter().enumerate() {
                if !(value > 0.0) || !value.is_finite() {
                    return Err(ParamError::NonPositive { name, index, value });
                }
            }
        }
        let non_negative: [(&'static str, &Pair); 4] = [
            ("tau_c_q", &self.tau_c_q),
            ("d_q", &self.d_q),
            ("tau_c_psi", &self.tau_c_psi),
            ("d_psi", &self.d_psi),
        ];
        for (name, pair) in non_negative {
            for (index, &value) in pair.iter().enumerate() {
                if !(value >= 0.0) || !value.is_finite() {
                    return Err(ParamError::BadFriction { name, index, value });
                }
            }
        }
        for (name, value) in [
            ("theta_max", self.theta_max),
            ("phi_max", self.phi_max),
            ("u_max", self.u_max),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ParamError::NonPositiveScalar { name, value });
            }
        }
        if !self.gravity.is_finite() {
            return Err(ParamError::NonFinite { name: "gravity" });
        }
        Ok(())
    }

    /// Link inertia about the joint axis (parallel-axis form).
    pub fn link_inertia_about_joint(&self, joint: usize) -> f64 {
        self.b_link[joint] + self.m_link[joint] * self.r_link[joint] * self.r_link[joint]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        assert_eq!(PlantParams::default().validate(), Ok(()));
    }

    #[test]
    fn zero_mass_is_rejected() {
        let mut p = PlantParams::default();
        p.m_link[1] = 0.0;
        assert_eq!(
            p.validate(),
            Err(ParamError::NonPositive { name: "m_link", index: 1, value: 0.0 })
        );
    }

    #[test]
    fn negative_stiffness_is_rejected() {
        let mut p = PlantParams::default();
        p.k_spring[0] = -12.5;
        assert!(matches!(p.validate(), Err(ParamError::NonPositive { name: "k_spring", .. })));
    }

    #[test]
    fn nan_friction_is_rejected() {
        let mut p = PlantParams::default();
        p.d_q[0] = f64::NAN;
        assert!(matches!(p.validate(), Err(ParamError::BadFriction { name: "d_q", .. })));
    }

    #[test]
    fn zero_gravity_is_allowed() {
        let mut p = PlantParams::default();
        p.gravity = 0.0;
        assert_eq!(p.validate(), Ok(()));
    }

    #[test]
    fn toml_round_trip_preserves_values() {
        let p = PlantParams::default();
        let text = toml::to_string(&p).unwrap();
        let back: PlantParams = toml::from_str(&text).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn partial_toml_overrides_only_named_fields() {
        let p: PlantParams = toml::from_str("k_spring = [10.0, 11.0]\ngravity = 0.0\n").unwrap();
        assert_eq!(p.k_spring, [10.0, 11.0]);
        assert_eq!(p.gravity, 0.0);
        assert_eq!(p.b_psi, PlantParams::default().b_psi);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = toml::from_str::<PlantParams>("k_sprig = [10.0, 11.0]\n").unwrap_err();
        assert!(err.to_string().contains("k_sprig"));
    }
}
