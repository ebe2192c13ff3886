use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum MletError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("svd did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    SvdNoConvergence { sweeps: usize, residual: f64 },
    #[error("index {index} out of range for table with {n} categories")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("metric undefined: {0}")]
    MetricUndefined(&'static str),
    #[error(
        "training diverged at epoch {epoch}, batch {batch}: loss {loss}, max |param| {max_abs_param:e}"
    )]
    Divergence {
        epoch: usize,
        batch: usize,
        loss: f64,
        max_abs_param: f64,
    },
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, MletError>;
