use std::path::Path;

use thiserror::Error;

/// Command failure, each kind mapping to one process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("format error: {0}")]
    Format(String),

    /// A verification command ran and found problems.
    #[error("check failed: {0}")]
    Check(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Usage(_) | CliError::Io(_) | CliError::Format(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<sfse_core::Error> for CliError {
    fn from(e: sfse_core::Error) -> Self {
        match e.root() {
            sfse_core::Error::NonFinite(_) => CliError::Numeric(e.to_string()),
            sfse_core::Error::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Format(e.to_string()),
        }
    }
}
