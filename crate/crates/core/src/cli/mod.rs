//! Experiment configuration, seeded runs, β-initialisation sweeps, summary
//! tables and the verification suite.

mod aggregate;
mod config;
mod run;
pub mod verify;

pub use aggregate::{aggregate, SummaryRow};
pub use config::{LbfgsOptions, OptimizerConfig, Preset, Resolved, RunConfig};
pub use run::{run, run_resolved, run_seed, sweep_beta, sweep_values, workers_from_env, FinalLoss, RunReport, RunResult, RunStatus, TRACE_HEADER};

use thiserror::Error;

/// Environment variable holding the number of parallel seed workers.
pub const WORKERS_ENV: &str = "STANPINN_WORKERS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn io(what: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{what}: {err}"))
    }

    /// Process exit code: 2 for a bad config, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 1,
        }
    }
}
