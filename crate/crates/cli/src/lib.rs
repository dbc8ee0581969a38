//! Experiment runner: TOML configs in, CSV tables and `meta.json` out.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

pub use config::{Experiment, ExperimentConfig};
pub use error::{CliError, Result};
