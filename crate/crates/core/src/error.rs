use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum SgnnError {
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    Dimension {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid shift operator: {0}")]
    InvalidShift(String),

    #[error("invalid random-edge model: {0}")]
    InvalidModel(String),

    #[error("invalid architecture or parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("non-finite value in layer {layer}")]
    NonFinite { layer: usize },

    #[error("eigendecomposition did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NoConvergence { sweeps: usize, off_norm: f64 },

    #[error("tape does not match the parameters it is being replayed against")]
    StaleTape,

    #[error("training diverged at iteration {iter}: {reason}")]
    Diverged { iter: usize, reason: String },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = SgnnError> = std::result::Result<T, E>;

pub(crate) fn check_len(expected: usize, actual: usize, context: &'static str) -> Result<()> {
    if expected != actual {
        return Err(SgnnError::Dimension {
            expected,
            actual,
            context,
        });
    }
    Ok(())
}
