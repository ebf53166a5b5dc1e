//! Crate-wide error type.

use thiserror::Error;

/// Errors raised across the optimization stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("bounds violation in dimension `{dim}`: {value} not in [{lower}, {upper}]")]
    OutOfBounds {
        dim: &'static str,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("invalid bounds for `{dim}`: lower {lower} must be < upper {upper}")]
    InvalidBounds {
        dim: &'static str,
        lower: f64,
        upper: f64,
    },

    #[error("unit coordinate {index} = {value} outside [0, 1]")]
    UnitRange { index: usize, value: f64 },

    #[error("invalid value for `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unsupported Sobol dimension {requested} (table supports up to {max})")]
    UnsupportedDimension { requested: usize, max: usize },

    #[error("direction-number table parse error on line {line}: {reason}")]
    DirectionTable { line: usize, reason: String },

    #[error("matrix not positive definite after jitter up to {jitter:e}")]
    Conditioning { jitter: f64 },

    #[error("constant training targets cannot be standardized")]
    ConstantTargets,

    #[error("need at least {required} training points, got {got}")]
    TooFewPoints { required: usize, got: usize },

    #[error("non-finite objective at optimizer start")]
    Initialization,

    #[error("model has not been fitted")]
    NotFitted,

    #[error("runtime calibration underdetermined: {got} converged points, need {required}")]
    Underdetermined { required: usize, got: usize },

    #[error("runtime calibration rank deficient: design has no spread in fidelity or area")]
    RankDeficient,

    #[error("runtime model predicts non-positive time {value} s")]
    InvalidCalibration { value: f64 },

    #[error("evaluator protocol error: {reason}")]
    Protocol { reason: String },

    #[error("evaluator timed out after {seconds} s")]
    Timeout { seconds: f64 },

    #[error("history comparison error: {0}")]
    Comparison(String),

    #[error("history file error: {0}")]
    History(String),

    #[error("configuration error ({kind}): {reason}")]
    Config { kind: &'static str, reason: String },

    #[error("aborted after {streak} consecutive unconverged evaluations")]
    EvaluatorStreak { streak: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
