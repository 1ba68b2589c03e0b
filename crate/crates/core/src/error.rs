use thiserror::Error;

/// Errors raised by the learners, oracles and experiment harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("matrix is not positive definite: non-positive pivot {value:e} at index {index}")]
    NotPositiveDefinite { index: usize, value: f64 },

    #[error("singular rank-one update: denominator {0:e}")]
    Singular(f64),

    #[error("point outside the open unit ball: |x| = {norm}")]
    Domain { norm: f64 },

    #[error("iteration did not converge after {iterations} iterations (last estimate {last_estimate:e})")]
    Convergence { iterations: usize, last_estimate: f64 },

    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("capability not supported by this set: {0}")]
    Unsupported(&'static str),

    #[error("oracle inconsistency: {0}")]
    OracleInconsistency(String),

    #[error("degenerate separator: <s, b> = {0:e}")]
    DegenerateSeparator(f64),

    #[error("Monte-Carlo precision not met: std error {std_error:e} exceeds {requested:e}")]
    Precision { std_error: f64, requested: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing telemetry: {0}")]
    MissingTelemetry(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

impl Error {
    /// Short stable identifier, used in machine-readable error reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::Degenerate(_) => "degenerate",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::Singular(_) => "singular",
            Error::Domain { .. } => "domain",
            Error::Convergence { .. } => "convergence",
            Error::AssumptionViolation(_) => "assumption_violation",
            Error::InvalidParams(_) => "invalid_params",
            Error::Unsupported(_) => "unsupported",
            Error::OracleInconsistency(_) => "oracle_inconsistency",
            Error::DegenerateSeparator(_) => "degenerate_separator",
            Error::Precision { .. } => "precision",
            Error::Contract(_) => "contract",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::MissingTelemetry(_) => "missing_telemetry",
            Error::Io(_) => "io",
        }
    }
}
