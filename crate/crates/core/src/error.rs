use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An index (arm, pull, round) outside its valid range.
    #[error("{what} {value} out of range (limit {limit})")]
    Range {
        what: &'static str,
        value: u64,
        limit: u64,
    },
    /// Invalid construction parameters (graphs, instances, presets).
    #[error("config error: {0}")]
    Config(String),
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    /// Input document failed schema validation. `path` names the field.
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
