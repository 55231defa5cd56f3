use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Input data could not be parsed or violates a data invariant.
    #[error("data error: {0}")]
    Data(String),

    /// A caller-supplied argument is outside its valid domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Numeric failure inside the sampler or predictive kernels.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The configured grid does not hold enough predictive mass for the target.
    #[error("grid too small: grid mass {grid_mass:.6} does not exceed target {target}")]
    GridTooSmall { grid_mass: f64, target: f64 },

    #[error("region construction did not converge after {0} iterations")]
    NonConvergence(usize),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
