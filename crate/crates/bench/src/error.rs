use std::path::PathBuf;

/// Errors surfaced by the benchmark tooling. Each maps to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Data(String),
    /// Runs of a grid that stopped on non-finite values.
    #[error("diverged runs: {}", .0.join(", "))]
    Diverged(Vec<String>),
    #[error(transparent)]
    Core(#[from] adfl_core::Error),
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

impl BenchError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BenchError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        BenchError::Format { path: path.into(), message: message.to_string() }
    }

    /// Process exit code: 3 configuration, 4 data, 5 divergence, 1 anything else.
    /// Usage errors exit with 2 before any of these can occur.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 3,
            BenchError::Core(adfl_core::Error::Config(_) | adfl_core::Error::Parse { .. }) => 3,
            BenchError::Data(_) | BenchError::Format { .. } => 4,
            BenchError::Core(adfl_core::Error::Dataset(_) | adfl_core::Error::Protocol { .. }) => 4,
            BenchError::Core(adfl_core::Error::Divergence { .. }) | BenchError::Diverged(_) => 5,
            _ => 1,
        }
    }
}
