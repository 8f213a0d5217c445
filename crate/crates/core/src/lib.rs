pub mod analysis;
pub mod baselines;
pub mod envgen;
pub mod error;
pub mod metrics;
pub mod persona;
pub mod rlagent;
pub mod rng;
pub mod selector;
pub mod surrogate;
pub mod tracker;

pub use error::{CoreError, Result};
