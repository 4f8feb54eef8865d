use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure in {run}: {source}")]
    Numeric {
        run: String,
        #[source]
        source: ctsa_core::Error,
    },

    #[error("I/O error on {}: {message}", path.display())]
    Io { path: PathBuf, message: String },

    #[error("{failed} acceptance check(s) failed")]
    Threshold { failed: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Threshold { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Numeric { .. } => 3,
            CliError::Io { .. } => 4,
        }
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }

    /// Classify a core error raised while executing the run named `run`.
    pub fn from_core(run: &str, err: ctsa_core::Error) -> Self {
        if err.is_numeric() {
            CliError::Numeric {
                run: run.to_string(),
                source: err,
            }
        } else {
            CliError::Config(format!("{run}: {err}"))
        }
    }
}
