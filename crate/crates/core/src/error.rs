use thiserror::Error;

use crate::gaussian::Rep;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("representation mismatch: expected {expected}, found {found}")]
    RepMismatch { expected: Rep, found: Rep },

    #[error("covariance is indefinite (smallest eigenvalue {eigenvalue:e})")]
    IndefiniteCovariance { eigenvalue: f64 },

    #[error("innovation covariance is singular")]
    SingularInnovation,

    #[error("predicted covariance is singular")]
    SingularPrediction,

    #[error("covariance is singular")]
    SingularCovariance,

    #[error("step {k}: {source}")]
    AtStep {
        k: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_step(k: usize) -> impl FnOnce(Error) -> Error {
        move |e| Error::AtStep {
            k,
            source: Box::new(e),
        }
    }

    /// The innermost error, with step annotations stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            other => other,
        }
    }
}
