use std::path::{Path, PathBuf};

/// Errors surfaced by the experiment layer. Each variant maps to a process
/// exit code so scripts can tell configuration mistakes from numerical faults.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error(transparent)]
    Core(#[from] bbrl_core::Error),
    #[error("{failed} of {total} seeds faulted")]
    SeedsFaulted { failed: usize, total: usize },
}

pub type RunResult<T> = Result<T, RunError>;

impl RunError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        RunError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn checkpoint(path: &Path, reason: impl Into<String>) -> Self {
        RunError::Checkpoint {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Io { .. } => 3,
            RunError::Checkpoint { .. } => 4,
            RunError::Core(_) => 5,
            RunError::SeedsFaulted { .. } => 6,
        }
    }

    /// Short category name written into fault records.
    pub fn category(&self) -> &'static str {
        match self {
            RunError::Config(_) => "config",
            RunError::Io { .. } => "io",
            RunError::Checkpoint { .. } => "checkpoint",
            RunError::Core(_) => "numerical",
            RunError::SeedsFaulted { .. } => "seeds",
        }
    }
}
