use thiserror::Error;

/// Errors raised anywhere in the coupling library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CouplingError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: String, found: String },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not positive semidefinite (minimum eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("symmetric eigensolve did not converge")]
    EigenSolve,

    #[error("invalid coupling control: largest eigenvalue of J^T J is {max_eigenvalue}")]
    InvalidControl { max_eigenvalue: f64 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("parameter `{name}` = {value} out of range: {constraint}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },

    #[error("zero vector cannot be normalized")]
    ZeroVector,

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl CouplingError {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CouplingError::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for CouplingError {
    fn from(err: std::io::Error) -> Self {
        CouplingError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CouplingError>;
