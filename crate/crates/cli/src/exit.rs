use std::process::ExitCode;

use gridprobe::pipeline::FailureRecord;
use gridprobe::{BackendError, PipelineError};
use thiserror::Error;

pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_BACKEND: u8 = 3;
pub const EXIT_UNSCORABLE: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("unscorable response: {0}")]
    Unscorable(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Backend(_) => EXIT_BACKEND,
            CliError::Unscorable(_) => EXIT_UNSCORABLE,
            CliError::Internal(_) => EXIT_INTERNAL,
        })
    }

    /// Maps a failure recorded in a trace.
    pub fn from_failure(item: &str, f: &FailureRecord) -> Self {
        let msg = format!("{item}: {} stage: {}", f.stage, f.message);
        match f.kind.as_str() {
            "unscorable" => CliError::Unscorable(msg),
            "config" => CliError::Config(msg),
            _ => CliError::Backend(msg),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Backend(BackendError::Unscorable { .. }) => {
                CliError::Unscorable(e.to_string())
            }
            PipelineError::Backend(BackendError::Config(_)) => CliError::Config(e.to_string()),
            PipelineError::Backend(_) => CliError::Backend(e.to_string()),
            PipelineError::Io { .. } => CliError::Internal(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}
