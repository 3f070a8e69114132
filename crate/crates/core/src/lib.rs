//! Fingerprinting audits for private covariance and heavy-tailed mean estimation.

pub mod calibration;
pub mod distributions;
pub mod error;
pub mod fingerprint;
pub mod linalg;
pub mod mechanisms;
pub mod parallel;
pub mod reductions;
pub mod rng;
pub mod stats;
pub mod validation;

pub use error::{Error, Result};
pub use linalg::{Matrix, SymMatrix, Vector};
pub use parallel::Runner;
pub use rng::SimRng;
pub use distributions::{Dataset, HeavyTailSpec, PriorSpec};
