use std::path::Path;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("missing {what}: {path}")]
    Missing { what: &'static str, path: String },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },

    #[error("{0}")]
    Core(#[from] cablegraph_core::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type CliResult<T> = Result<T, CliError>;

/// Machine-readable error printed on failure.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, err: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            message: err.to_string(),
        }
    }

    pub fn missing(what: &'static str, path: impl AsRef<Path>) -> Self {
        CliError::Missing {
            what,
            path: path.as_ref().display().to_string(),
        }
    }

    pub fn checkpoint(path: impl AsRef<Path>, message: impl Into<String>) -> Self {
        CliError::Checkpoint {
            path: path.as_ref().display().to_string(),
            message: message.into(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Missing { .. } => "missing",
            CliError::Checkpoint { .. } => "checkpoint",
            CliError::Core(_) => "core",
            CliError::Json(_) => "json",
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport {
            kind: self.kind(),
            message: self.to_string(),
        }
    }
}
