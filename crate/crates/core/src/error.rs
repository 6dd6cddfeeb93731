//! Error types shared across the library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument left the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent grid/step/window configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// An index or window fell outside the available data.
    #[error("range error: {0}")]
    Range(String),

    /// Not enough observations for the requested statistic.
    #[error("insufficient data: need {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    /// Statistic degenerated (e.g. zero reduced quadratic variation).
    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    /// Drift or diffusion produced a non-finite value during simulation.
    #[error("simulation error at step {step}: {msg}")]
    Simulation { step: usize, msg: String },

    /// The optimizer could not produce a finite candidate.
    #[error("optimizer error: {0}")]
    Optim(String),

    /// Text input failed to parse as numeric data.
    #[error("parse error in {path} at line {line}, column {column}: {msg}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code the CLI maps this error onto: 2 for configuration
    /// problems, 3 for data problems.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Domain(_) | Error::Config(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
