use thiserror::Error;

use crate::pgd::PgdRun;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid region: {0}")]
    InvalidRegion(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate gradient (norm {norm:e}); re-seed the restart")]
    DegenerateGradient { norm: f64 },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid policy: {0}")]
    Policy(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("simulator timed out after {0:?}")]
    Timeout(std::time::Duration),

    #[error("search interrupted: {source}")]
    Interrupted {
        #[source]
        source: Box<Error>,
        partial: Box<PgdRun>,
    },

    #[error("no passing radius found down to {floor:e}; the equilibrium may be unstable or delta too small")]
    DegenerateRegion { floor: f64 },

    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("dimension guard: {0}")]
    DimensionGuard(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the simulator connection rather than of the inputs.
    pub fn is_transport(&self) -> bool {
        match self {
            Error::Transport(_) | Error::Protocol(_) | Error::Timeout(_) => true,
            Error::Interrupted { source, .. } => source.is_transport(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
