use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{path} line {line}: {message}")]
    Csv { path: PathBuf, line: u64, message: String },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] feedrisk_core::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Machine-readable form printed to standard error on failure.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<u64>,
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.into(),
            message: e.to_string(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Config(_) => "config",
            CliError::Csv { .. } => "csv",
            CliError::Usage(_) => "usage",
            CliError::Core(feedrisk_core::Error::InvalidParameter(_))
            | CliError::Core(feedrisk_core::Error::InvalidInput(_))
            | CliError::Core(feedrisk_core::Error::DimensionMismatch { .. })
            | CliError::Core(feedrisk_core::Error::SeedReuse(_)) => "validation",
            CliError::Core(_) => "numerical",
        }
    }

    /// 2 for rejected input, 1 for failures during computation.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "numerical" | "io" => 1,
            _ => 2,
        }
    }

    pub fn report(&self) -> ErrorReport {
        let (path, line) = match self {
            CliError::Io { path, .. } => (Some(path.display().to_string()), None),
            CliError::Csv { path, line, .. } => (Some(path.display().to_string()), Some(*line)),
            _ => (None, None),
        };
        ErrorReport {
            kind: self.kind(),
            message: self.to_string(),
            path,
            line,
        }
    }
}
