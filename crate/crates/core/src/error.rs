//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by planning, learning and I/O operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value (bad horizon, branching, bounds, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid or empty data passed to a learning routine.
    #[error("data error: {0}")]
    Data(String),

    /// A solver did not reach the requested tolerance.
    #[error("solver error: {0}")]
    Solver(String),

    /// A non-finite value was produced during an evaluation.
    #[error("numerical error: {0}")]
    NonFinite(String),

    /// An operation required a converged solution but got `{0}`.
    #[error("solution not converged: {0}")]
    NotConverged(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
