//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by parsing, model construction and sampling.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file; carries the 1-based line number where parsing failed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Input parsed but is unusable for inference (e.g. a single haplotype).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// Network construction exceeded the inferred-node budget.
    #[error(
        "network saturation: {nodes} inferred intermediates exceed the budget of {budget}; \
         the data may show mutational saturation or excessive homoplasy — try a smaller ds"
    )]
    Saturation { nodes: usize, budget: usize },

    /// Exhaustive enumeration is not feasible for this instance.
    #[error("exact enumeration unavailable: {0}")]
    EnumerationUnavailable(String),

    /// Invalid run configuration.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Invalid model state passed to an operation.
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// Internal invariant violated; indicates a bug.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
