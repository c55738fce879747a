//! Experiment harness for balanced-truncation Bayesian inference: a TOML
//! configuration schema, the error-vs-rank pipeline, and CSV/manifest
//! emission. The `btinfer` binary in this crate is a thin wrapper over
//! these pieces.

pub mod config;
pub mod error;
pub mod experiment;

pub use config::{ExperimentConfig, Method};
pub use error::CliError;
pub use experiment::{run_experiment, ExperimentResult};
