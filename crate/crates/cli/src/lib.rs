//! Configuration-driven experiment runner for the `isaacs-core` solvers.
//!
//! A run reads a TOML [`config::ExperimentConfig`], builds the problem,
//! solves the lower and upper value functions, executes the requested
//! checks in a fixed order and writes CSV/JSON reports plus a manifest
//! with digests of every file.

pub mod builtins;
pub mod checks;
pub mod config;
pub mod expr;
pub mod report;
pub mod runner;

pub use config::{CheckName, ExperimentConfig};
pub use runner::{run_config, run_file, RunOptions, RunOutcome};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver error: {0}")]
    Solver(#[from] isaacs_core::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => runner::EXIT_CONFIG,
            Self::Solver(_) => runner::EXIT_SOLVER,
            Self::Io(_) => runner::EXIT_IO,
        }
    }
}
