//! Error type shared across the crate.

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A numeric argument left the domain of an operation.
    #[error("domain error in {context}: offending value {value}")]
    Domain {
        /// Operation or parameter that was violated.
        context: &'static str,
        /// The offending value.
        value: f64,
    },

    /// An instrument / estimator / run configuration is inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The requested combination is deliberately not supported.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// An optimizer failed to make progress.
    #[error("optimizer: {0}")]
    Optimizer(String),
}

impl Error {
    pub(crate) fn domain(context: &'static str, value: f64) -> Self {
        Error::Domain { context, value }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
