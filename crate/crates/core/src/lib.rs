//! Model predictive control posed as ensemble smoothing of a matrix-valued
//! virtual system.
//!
//! The control horizon is treated as a trajectory to be estimated: costs on
//! state and input deviations become observation noise, control increments
//! become process noise, and a matrix-variate ensemble Kalman smoother
//! returns the control sequence as the posterior mean.

pub mod baselines;
pub mod controller;
pub mod dynamics;
pub mod enks;
pub mod error;
pub mod matvar;
pub mod stream;
pub mod virtualsys;

pub use error::{Error, Result};
pub use stream::{Channel, NoiseStreams};
