//! Calibration-error estimation, PAC-Bayes certificates for the estimation
//! error, and PAC-Bayes recalibration.
//!
//! Everything random takes an explicit seed; identical inputs give
//! bit-identical outputs.

pub mod bounds;
pub mod ece;
mod error;
pub mod harness;
pub mod prediction;
pub mod recal;
pub mod rng;
pub mod synthetic;

mod par;

pub use error::{Error, Result, Violation};
pub use prediction::PredictionSet;
pub use rng::Rng;
