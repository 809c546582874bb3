use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("fixed point did not converge after {iterations} iterations (last step {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("degenerate case: {0}")]
    Degenerate(String),

    #[error("root search failed: {0}")]
    RootNotFound(String),

    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonConvergence { .. } => 3,
            _ => 2,
        }
    }
}
