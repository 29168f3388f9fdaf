//! Noise-aware preference optimization on a synthetic bimodal task.

pub mod data;
pub mod error;
pub mod harness;
pub mod loss;
pub mod margin;
pub mod objective;
pub mod policy;
pub mod sweep;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};
