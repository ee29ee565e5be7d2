//! Model-free velocity that transports any state onto a fixed target.

use super::{check_eval_site, EvalCounter, VelocityField};
use crate::error::{FlowError, Result};
use crate::state::Condition;

/// v(x, t) = (target - x) / (1 - t).
///
/// Euler integration of this field over any grid lands exactly on the target
/// at t = 1: the error e_i = x_i - target telescopes as
/// e_{i+1} = e_i * (1 - t_{i+1}) / (1 - t_i), and the final factor vanishes.
///
/// Constructed via [`DeterministicTargetField::free`], its evaluations are
/// excluded from model NFE totals, since no model call is involved.
#[derive(Debug)]
pub struct DeterministicTargetField {
    target: Vec<f64>,
    free: bool,
    counter: EvalCounter,
}

impl DeterministicTargetField {
    pub fn new(target: Vec<f64>) -> Result<Self> {
        Self::build(target, false)
    }

    /// Same field, flagged as free of model cost.
    pub fn free(target: Vec<f64>) -> Result<Self> {
        Self::build(target, true)
    }

    fn build(target: Vec<f64>, free: bool) -> Result<Self> {
        if target.is_empty() {
            return Err(FlowError::InvalidDimension);
        }
        if !target.iter().all(|v| v.is_finite()) {
            return Err(FlowError::NonFinite("target values"));
        }
        Ok(Self {
            target,
            free,
            counter: EvalCounter::new(),
        })
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }
}

impl VelocityField for DeterministicTargetField {
    fn dim(&self) -> usize {
        self.target.len()
    }

    fn condition_dim(&self) -> usize {
        self.target.len()
    }

    fn evaluate(&self, x: &[f64], t: f64, _condition: &Condition) -> Result<Vec<f64>> {
        check_eval_site(self.dim(), x, t)?;
        self.counter.bump();
        let inv = 1.0 / (1.0 - t);
        Ok(self
            .target
            .iter()
            .zip(x)
            .map(|(s, xi)| (s - xi) * inv)
            .collect())
    }

    fn eval_count(&self) -> u64 {
        self.counter.get()
    }

    fn nfe_free(&self) -> bool {
        self.free
    }
}
