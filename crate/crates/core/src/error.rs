//! Error taxonomy shared across the crate.
//!
//! Variants map onto the CLI exit-code contract: usage/input problems
//! exit 2, numeric failures exit 3.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up for an operation.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// A configuration value is invalid or inconsistent.
    #[error("invalid config: {0}")]
    Config(String),

    /// Caller-supplied data violates a precondition.
    #[error("invalid input: {0}")]
    Input(String),

    /// An internal API contract was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A computation produced NaN/Inf or otherwise failed numerically.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A file did not match its declared binary format.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code for the CLI: 2 for usage/input errors, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_contract() {
        assert_eq!(Error::Numeric("nan".into()).exit_code(), 3);
        assert_eq!(Error::Input("bad".into()).exit_code(), 2);
        assert_eq!(Error::Config("bad".into()).exit_code(), 2);
        assert_eq!(Error::Format { offset: 0, msg: "bad".into() }.exit_code(), 2);
    }
}
