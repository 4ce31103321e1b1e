//! Sensorless power-factor control of a single-phase boost rectifier.
//!
//! The crate models the averaged converter ([`plant`]), its periodic steady
//! states ([`steady_state`]), an immersion-and-invariance estimator of the
//! source phasor and current ([`estimator`]), indirect and certainty-equivalent
//! controllers ([`controller`]), a fixed-step closed-loop simulator
//! ([`sim_engine`]) and trace metrics ([`metrics`]).

pub mod cli;
pub mod controller;
pub mod error;
pub mod estimator;
pub mod metrics;
pub mod ode;
pub mod plant;
pub mod scenario;
pub mod sim_engine;
pub mod steady_state;

pub use error::{PfcError, Result};
