use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("model did not converge: {0}")]
    NotConverged(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::NotConverged(_) => 2,
            CliError::Io { .. } => 3,
        }
    }
}

pub trait Context<T> {
    /// Map a library error to a validation failure, prefixed with `context`.
    fn invalid(self, context: &str) -> Result<T, CliError>;
}

impl<T, E: std::fmt::Display> Context<T> for Result<T, E> {
    fn invalid(self, context: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::Validation(format!("{context}: {e}")))
    }
}
