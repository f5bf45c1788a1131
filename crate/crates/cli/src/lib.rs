//! Config-driven experiment runner for `baryprox`.
//!
//! Exit codes: 0 on success, 1 on config or domain errors, 2 when the
//! method does not converge, diverges or a check fails. Artifacts are
//! written in every case that reaches the method.

pub mod config;
pub mod error;
pub mod output;
pub mod runner;

pub use config::ExperimentConfig;
pub use error::CliError;
pub use output::RunSummary;
pub use runner::{run_config_file, run_config_str, RunOptions, RunOutcome};
