use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IbiaError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("factor {factor}: table has {found} entries, expected {expected}")]
    TableLength { factor: usize, expected: usize, found: usize },

    #[error("unknown variable {0}")]
    UnknownVariable(usize),

    #[error("state {state} out of range for variable {var} (cardinality {card})")]
    StateOutOfRange { var: usize, state: usize, card: usize },

    #[error("variable {var} has cardinality {left} in one factor and {right} in another")]
    CardinalityMismatch { var: usize, left: usize, right: usize },

    #[error("variable {var} is not in the factor scope")]
    NotInScope { var: usize },

    #[error("invalid factor: {0}")]
    InvalidFactor(String),

    #[error("division of a positive entry by zero (calibration inconsistency)")]
    CalibrationInconsistency,

    #[error("normalization constants disagree within tree rooted at clique {root}: {detail}")]
    NumericalFailure { root: usize, detail: String },

    #[error("clique size bound {bound} cannot hold factor of size {size:.3}")]
    BoundTooSmall { bound: f64, size: f64 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("state count {states} exceeds cap {cap}")]
    CapExceeded { states: f64, cap: u64 },

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error("incomparable values: {0}")]
    Incomparable(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, IbiaError>;
