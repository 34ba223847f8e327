//! Experiment runner for the `rsde` laboratory.
//!
//! A run reads a configuration file, performs one experiment, and writes a
//! CSV file with the raw numbers plus `summary.json` with statistics,
//! verdicts, tolerances, the resolved configuration and per-stage timings.

pub mod config;
pub mod output;
pub mod run;

use thiserror::Error;

pub use config::{ExperimentConfig, ExperimentKind, Resolved};
pub use run::{run_experiment, verify_domain, Summary, Verdict};

/// Version string embedded in every summary.
pub const VERSION: &str = env!("RSDE_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("domain rejected: {0}")]
    DomainRejected(String),
    #[error("{context}: {message}")]
    Runtime { context: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn runtime(context: &str, err: impl std::fmt::Display) -> Self {
        CliError::Runtime { context: context.to_string(), message: err.to_string() }
    }

    /// Process exit code: 2 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } => 2,
            _ => 3,
        }
    }
}
