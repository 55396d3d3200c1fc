//! Crate-wide error type.

use alloc::string::String;

/// Errors raised by dataset construction, network wiring, and training.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A configuration value violates its documented invariant.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A call broke an operation's precondition (shape mismatch, empty
    /// input, out-of-range label, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Training produced a non-finite value; the offending term is named.
    #[error("training failure in `{term}`: {message}")]
    Training { term: &'static str, message: String },
    /// An epoch observer (checkpoint/metrics sink) failed.
    #[error("observer failure: {0}")]
    Observer(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
