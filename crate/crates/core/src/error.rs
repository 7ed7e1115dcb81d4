use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value outside the domain of an operation (negative delay, empty matrix, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Power iteration ran out of iterations; carries the last iterate.
    #[error("stationary distribution did not converge after {iterations} iterations")]
    NotConverged { iterations: usize, last: [f64; 4] },

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Diverged { epoch: usize, loss: f64 },

    /// SMO hit its iteration cap before the KKT gap closed; carries the
    /// best-so-far machine (its `converged` flag is false).
    #[error("SMO reached the iteration cap ({iterations}) with KKT gap {gap:.3e}")]
    IterationCap { iterations: usize, gap: f64, best: Box<crate::svm::BinarySvm> },

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
