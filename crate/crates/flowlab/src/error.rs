//! Error type shared by every module in the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FlowError>;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid dimension: d must be at least 1")]
    InvalidDimension,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("condition payload length {got} does not match condition dimension {expected}")]
    ConditionDimension { expected: usize, got: usize },

    #[error("velocity requested at t={0}, beyond the singular-time guard")]
    SingularTime(f64),

    #[error("state time {got} does not match expected grid node t={expected}")]
    TimeMismatch { expected: f64, got: f64 },

    #[error("integration diverged: non-finite velocity at step {step}")]
    Diverged { step: usize },

    #[error("invalid step range [{from}, {to})")]
    IndexOrder { from: usize, to: usize },

    #[error("singular inversion step at index {index}: a(t_i) * dt_i = -1")]
    SingularInversion { index: usize },

    #[error(
        "degenerate stage split: transition index {tau} must satisfy 1 <= tau <= n-1 (n = {n})"
    )]
    DegenerateSplit { tau: usize, n: usize },

    #[error("grids of the two inputs do not match")]
    GridMismatch,

    #[error("mask value {0} outside [0, 1]")]
    MaskRange(f64),

    #[error("{0} out of bounds")]
    OutOfBounds(&'static str),

    #[error("speedup ratio with zero NFE divisor")]
    ZeroNfe,

    #[error("operation requires an affine field")]
    NotAffine,

    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}
