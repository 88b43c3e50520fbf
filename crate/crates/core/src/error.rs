use thiserror::Error;

/// Errors raised by models, the oracle, the sampler and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of range: {0}")]
    Range(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// A normalizing constant vanished. Under strictly positive potentials this
    /// cannot happen, so it signals a construction bug.
    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("every particle weight underflowed at step {k} (replicate {replicate})")]
    TotalDegeneracy { k: usize, replicate: u64 },

    #[error("non-finite value {value} at particle {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
