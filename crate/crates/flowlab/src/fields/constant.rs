//! Constant velocity field, independent of state, time, and conditioning.

use super::{check_eval_site, EvalCounter, VelocityField};
use crate::error::{FlowError, Result};
use crate::state::Condition;

/// v(x, t; c) = c0 for a fixed vector c0. Forward sampling followed by the
/// practical backward approximation round-trips exactly, because the velocity
/// does not depend on the state being reconstructed.
#[derive(Debug)]
pub struct ConstantField {
    values: Vec<f64>,
    condition_dim: usize,
    counter: EvalCounter,
}

impl ConstantField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let d = values.len();
        Self::with_condition_dim(values, d)
    }

    pub fn with_condition_dim(values: Vec<f64>, condition_dim: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(FlowError::InvalidDimension);
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(FlowError::NonFinite("constant field values"));
        }
        Ok(Self {
            values,
            condition_dim,
            counter: EvalCounter::new(),
        })
    }
}

impl VelocityField for ConstantField {
    fn dim(&self) -> usize {
        self.values.len()
    }

    fn condition_dim(&self) -> usize {
        self.condition_dim
    }

    fn evaluate(&self, x: &[f64], t: f64, _condition: &Condition) -> Result<Vec<f64>> {
        check_eval_site(self.dim(), x, t)?;
        self.counter.bump();
        Ok(self.values.clone())
    }

    fn eval_count(&self) -> u64 {
        self.counter.get()
    }
}
