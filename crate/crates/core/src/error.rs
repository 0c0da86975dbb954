//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by estimation, selection, and data-handling routines.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Invalid tuning or configuration parameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("input error: {0}")]
    Input(String),

    /// The sample moment identifying the target coefficient is numerically
    /// indistinguishable from zero; Wald inference is refused.
    #[error(
        "weak identification: {0}; report a score-inverted confidence set instead of a Wald interval"
    )]
    WeakIdentification(String),

    /// A statistic is degenerate (for example an identically-zero moment
    /// vector) and cannot be computed.
    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    /// An iterative routine exhausted its iteration budget.
    #[error("non-convergence: {0}")]
    NonConvergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;
