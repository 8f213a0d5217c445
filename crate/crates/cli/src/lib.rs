//! Seeded experiment pipeline over the simulator: configuration, stages,
//! and the run manifest.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

pub use config::{ExperimentConfig, Overrides, Scale};
pub use error::{CliError, Result};
pub use manifest::RunManifest;
pub use pipeline::{Outcome, Runner, Stage};
