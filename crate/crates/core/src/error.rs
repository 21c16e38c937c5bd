use thiserror::Error;

/// Unified error type for the simulator, trainer, and CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("numerical fault: {0}")]
    Numerical(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable category, used by the CLI error output.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Domain(_) => "domain",
            Error::Checkpoint(_) => "checkpoint",
            Error::Numerical(_) => "numerical",
            Error::Internal(_) => "internal",
        }
    }

    /// Process exit code for the category (0 is reserved for success).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Parse { .. } => 3,
            Error::Io(_) => 4,
            Error::Domain(_) => 5,
            Error::Checkpoint(_) => 6,
            Error::Numerical(_) => 7,
            Error::Internal(_) => 8,
        }
    }
}
