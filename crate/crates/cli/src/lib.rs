//! Command-line front end for the L1-GP toolkit: experiment decks in TOML,
//! CSV traces and JSON reports.

pub mod commands;
pub mod config;
pub mod output;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Run(#[from] l1gp_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Precondition(_) => 4,
            Self::Io(_) | Self::Run(_) => 1,
        }
    }
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Finished, but a run was flagged unstable.
    Unstable,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Self::Ok => 0,
            Self::Unstable => 3,
        }
    }
}

/// Worker cap from `L1GP_THREADS`, else the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var("L1GP_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}
