//! Behavioral model of a subthreshold voltage-to-spike encoder: a bulk-driven
//! linearized transconductor feeding a differential-pair-integrator neuron.

pub mod analysis;
pub mod cli;
pub mod device;
pub mod error;
pub mod neuron;
pub mod sim;
pub mod transconductor;
pub mod tuner;

pub use error::{Error, Result};
