//! Experiment front-end for the DPFL laboratory.

pub mod commands;
pub mod config;
pub mod persist;

/// CLI failures, grouped by exit code: config errors exit 2, training
/// failures 3, audit failures 4, anything else 1.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("training failure: {0}")]
    Training(String),
    #[error("audit failure: {0}")]
    Audit(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Training(_) => 3,
            CliError::Audit(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}
