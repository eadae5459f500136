//! Error type shared by all modules.

/// Library-wide error enum. The CLI maps variants onto process exit
/// codes, so the classification (precondition vs. audit vs. numerical
/// diagnostic) is part of the contract.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A mathematical precondition was violated (negative time, bad
    /// dimension, declared sup-norm exceeded, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A structurally invalid argument (zero samples, shape mismatch,
    /// missing source term, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The smallness condition guaranteeing the nonlinear representation
    /// does not hold for this configuration.
    #[error("well-posedness check failed: {0}")]
    IllPosed(String),

    /// A certified bound was violated at audit time.
    #[error("bound audit failed: {0}")]
    AuditFailed(String),

    /// A numerical routine could not reach its requested tolerance.
    #[error("tolerance not reached: {0}")]
    Tolerance(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
