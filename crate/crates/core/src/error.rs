use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("projection did not converge after {iterations} iterations (residual {residual:e})")]
    ConvergenceFailure { iterations: usize, residual: f64 },

    #[error("unsupported penalty: {0}")]
    UnsupportedPenalty(String),

    #[error("sampler diverged at step {step} (|x| = {norm:e})")]
    Divergence { step: u64, norm: f64 },

    #[error("internal consistency check failed: {0}")]
    InternalConsistency(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("constraint callback failed: {0}")]
    Callback(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub(crate) fn ensure_finite(x: &[f64], what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} contains non-finite entries")))
    }
}
