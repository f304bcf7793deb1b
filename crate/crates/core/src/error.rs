use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("divergence at step {step}: norm {norm:.3e} exceeds cap {cap:.3e}")]
    Divergence { step: usize, norm: f64, cap: f64 },

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("{} of {total} replicas failed, replicas {failed:?}; first failure: {first}", failed.len())]
    PartialResult { failed: Vec<usize>, total: usize, first: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) | Error::InvalidArgument(_) => 2,
            Error::InvalidOperator(_) | Error::Unsupported(_) | Error::Format(_) => 2,
            _ => 3,
        }
    }
}
