use thiserror::Error;

/// Errors produced by the model, the solvers and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("integration failed at t = {t}: {reason}")]
    IntegrationFailure { t: f64, reason: String },

    #[error("sample {sample} of N = {n}: {source}")]
    Sample {
        n: usize,
        sample: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error in `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

impl Error {
    /// True for failures of the time integrator, including wrapped ones.
    pub fn is_integration_failure(&self) -> bool {
        match self {
            Error::IntegrationFailure { .. } => true,
            Error::Sample { source, .. } => source.is_integration_failure(),
            _ => false,
        }
    }
}
