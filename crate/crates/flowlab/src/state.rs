//! Core value types: latent states, grid shapes, masks, and conditioning.
//!
//! Everything here is an immutable value after construction and can be shared
//! freely between tasks. Constructors validate their invariants and return
//! [`FlowError`](crate::FlowError) on violation.

use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};

/// Tolerance for matching a state's time coordinate against a grid node.
pub const TIME_MATCH_TOL: f64 = 1e-12;

/// Rows x cols layout of a state that represents a grayscale grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(FlowError::InvalidArgument(
                "grid shape sides must be at least 1",
            ));
        }
        Ok(Self { rows, cols })
    }

    /// Number of coordinates in a state with this shape.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// One point on a flow trajectory: a flat real-valued sample and its time
/// coordinate in [0, 1].
///
/// States carry their own time so mismatched state/grid usage is detectable:
/// operations check `time()` against the expected grid node within
/// [`TIME_MATCH_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    values: Vec<f64>,
    time: f64,
    shape: Option<GridShape>,
}

impl LatentState {
    pub fn new(values: Vec<f64>, time: f64) -> Result<Self> {
        Self::build(values, time, None)
    }

    pub fn with_shape(values: Vec<f64>, time: f64, shape: GridShape) -> Result<Self> {
        Self::build(values, time, Some(shape))
    }

    fn build(values: Vec<f64>, time: f64, shape: Option<GridShape>) -> Result<Self> {
        if values.is_empty() {
            return Err(FlowError::InvalidDimension);
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(FlowError::NonFinite("state values"));
        }
        if !time.is_finite() || !(0.0..=1.0).contains(&time) {
            return Err(FlowError::TimeOutOfRange(time));
        }
        if let Some(s) = shape {
            if s.len() != values.len() {
                return Err(FlowError::DimensionMismatch {
                    expected: s.len(),
                    got: values.len(),
                });
            }
        }
        Ok(Self {
            values,
            time,
            shape,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn shape(&self) -> Option<GridShape> {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Same values at a different time coordinate.
    pub fn at_time(&self, time: f64) -> Result<Self> {
        Self::build(self.values.clone(), time, self.shape)
    }

    /// Checks that this state sits on the expected time node.
    pub fn expect_time(&self, expected: f64) -> Result<()> {
        if (self.time - expected).abs() > TIME_MATCH_TOL {
            return Err(FlowError::TimeMismatch {
                expected,
                got: self.time,
            });
        }
        Ok(())
    }
}

/// Per-coordinate blend weights in [0, 1]. Binary masks mark edited regions
/// with 1 and preserved background with 0; fractional values interpolate.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    values: Vec<f64>,
    shape: Option<GridShape>,
}

impl Mask {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::build(values, None)
    }

    pub fn with_shape(values: Vec<f64>, shape: GridShape) -> Result<Self> {
        Self::build(values, Some(shape))
    }

    fn build(values: Vec<f64>, shape: Option<GridShape>) -> Result<Self> {
        if values.is_empty() {
            return Err(FlowError::InvalidDimension);
        }
        for &v in &values {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(FlowError::MaskRange(v));
            }
        }
        if let Some(s) = shape {
            if s.len() != values.len() {
                return Err(FlowError::DimensionMismatch {
                    expected: s.len(),
                    got: values.len(),
                });
            }
        }
        Ok(Self { values, shape })
    }

    /// All-ones mask of dimension `d`.
    pub fn ones(d: usize) -> Result<Self> {
        Self::new(vec![1.0; d])
    }

    /// All-zeros mask of dimension `d`.
    pub fn zeros(d: usize) -> Result<Self> {
        Self::new(vec![0.0; d])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> Option<GridShape> {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Conditioning input handed to a velocity field: nothing, the source sample,
/// or the reference exemplar.
#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    None,
    Source(Vec<f64>),
    Reference(Vec<f64>),
}

impl Condition {
    pub fn payload(&self) -> Option<&[f64]> {
        match self {
            Condition::None => None,
            Condition::Source(p) | Condition::Reference(p) => Some(p),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Condition::None => "none",
            Condition::Source(_) => "source",
            Condition::Reference(_) => "reference",
        }
    }
}
