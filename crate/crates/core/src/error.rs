//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
///
/// The variants map onto the CLI exit-code contract: `Config` and
/// `Validation` are exit code 1, `Numerical` is exit code 2 and `Audit`
/// is exit code 3. `Io` failures surface as validation errors.
#[derive(Debug, Error)]
pub enum KsmError {
    /// Malformed or inconsistent configuration. The message carries the
    /// offending key path where available.
    #[error("config error: {0}")]
    Config(String),

    /// An operation was called outside its contract.
    #[error("validation error: {0}")]
    Validation(String),

    /// The numerics broke down: solver non-convergence, NaN fields,
    /// CFL violation, or a structure invariant drifting out of tolerance.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A stored trajectory failed re-auditing against its bounds.
    #[error("audit failure: {0}")]
    Audit(String),

    /// Filesystem or parse failure while persisting/reading artifacts.
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for KsmError {
    fn from(e: std::io::Error) -> Self {
        KsmError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, KsmError>;
