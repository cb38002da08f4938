//! Trajectory optimization and simulation for clutched-elastic robots.
//!
//! A two-joint arm with bi-stiffness actuators is modeled as a hybrid system:
//! smooth elastic dynamics interrupted by clutch and brake events that
//! project velocities. The crate provides
//!
//! - the plant model and its parameters ([`params`], [`dynamics`], [`state`]),
//! - discrete mode machinery and schedules ([`modes`]),
//! - an event-driven simulator with exact switch handling ([`sim`]),
//! - a contact-implicit direct transcription whose complementarity structure
//!   lets the optimizer choose the switching sequence ([`transcription`]),
//! - a relaxation homotopy driver over an interior-point core ([`solver`]),
//! - time-varying LQR synthesis across mode switches ([`lqr`]),
//! - file formats and a command-line front end ([`artifacts`], [`cli`]).

pub mod artifacts;
pub mod autodiff;
pub mod dynamics;
pub mod lqr;
pub mod modes;
pub mod params;
pub mod sim;
pub mod solver;
pub mod state;
pub mod transcription;
