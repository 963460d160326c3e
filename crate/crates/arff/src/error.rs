//! Crate-wide error type.

/// Errors surfaced by the library.
///
/// The CLI maps these onto exit codes: configuration and input problems,
/// solver failures, and I/O failures are distinguishable by variant.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Mathematically degenerate input, e.g. all-zero truth in a relative
    /// error, or an all-zero coefficient table.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid probability vector: {0}")]
    InvalidProbabilities(String),

    /// No aggregated amplitude survives the cutoff threshold.
    #[error("empty surviving cutoff set at epsilon={epsilon}")]
    EmptyCutoff { epsilon: f64 },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input data (bad magic, truncated payload, ...).
    #[error("format error: {0}")]
    Format(String),

    /// A guard refused the operation (dense size, oracle dimension, ...).
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code the CLI uses for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DimensionMismatch(_)
            | Error::Degenerate(_)
            | Error::InvalidProbabilities(_)
            | Error::EmptyCutoff { .. }
            | Error::Config(_)
            | Error::Format(_)
            | Error::Unsupported(_) => 2,
            Error::Solver(_) => 3,
            Error::Io(_) | Error::Csv(_) => 4,
        }
    }
}
