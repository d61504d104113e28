//! Desk-scale preference-optimization laboratory.
//!
//! Direct Preference Optimization over an exactly enumerable position-wise
//! categorical policy, extended with batch-level dynamic beta calibration and
//! beta-guided data filtering. A synthetic preference-data generator and an
//! exact ground-truth win-rate oracle make every training mechanism
//! observable end to end: log-probabilities, gradients, and win rates are all
//! computable in closed form or by full enumeration.

pub mod calibration;
pub mod error;
pub mod eval;
pub mod filter;
pub mod loss;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod synth;
pub mod trainer;
pub mod types;

mod tensor_io;

pub use error::{Error, Result};
