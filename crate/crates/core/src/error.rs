use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is out of its admissible range or has the wrong shape.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// Input data violates a structural requirement (non-finite, asymmetric, ...).
    #[error("invalid data: {0}")]
    Data(String),
    /// A forward pass produced non-finite values.
    #[error("non-finite value in layer {layer}: {message}")]
    Numeric { layer: usize, message: String },
    /// A configuration is internally inconsistent.
    #[error("configuration error: {0}")]
    Config(String),
    /// Eigenpairs failed to converge under the strict policy.
    #[error("eigensolver did not converge for layer {layer}: {converged} of {requested} pairs")]
    Unconverged {
        layer: usize,
        converged: usize,
        requested: usize,
    },
    /// Training diverged.
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
