//! Command-line pipeline for synthetic flow inversions: synthesis of kernels, noise and
//! data, inversion with a chosen estimator, diagnostics, and numerical self-checks.

pub mod artifacts;
pub mod bench;
pub mod commands;
pub mod config;
pub mod error;
pub mod hif;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
