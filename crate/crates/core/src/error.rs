use thiserror::Error;

/// Errors raised by tensor operations, model construction and persistence.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes that an operation cannot combine.
    #[error("{op}: dimension mismatch: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A precondition of an operation did not hold.
    #[error("{0}")]
    Contract(String),

    #[error(transparent)]
    Checkpoint(#[from] crate::model::checkpoint::CheckpointError),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn shapes(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            detail: format!("{lhs:?} vs {rhs:?}"),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
