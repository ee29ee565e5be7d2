//! Conditioned velocity fields v(x, t; c) with evaluation counting.
//!
//! Three tiers stand in for a pretrained editing model: a trivially
//! invertible constant field, an analytically solvable affine family, and an
//! opaque nonlinear field with fixed random weights. A fourth, model-free
//! field transports any state onto a fixed target.

mod affine;
mod constant;
mod deterministic;
mod smooth;

pub use affine::{AffineField, AffineFieldSpec};
pub use constant::ConstantField;
pub use deterministic::DeterministicTargetField;
pub use smooth::{SmoothRandomField, SmoothRandomFieldSpec};

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::state::Condition;

/// Largest time at which a field may be evaluated. Euler updates never need
/// the velocity at t = 1 (the last evaluation sits at t_{n-1}), so anything
/// beyond this bound is a misuse and reported as a singular-time error.
pub const MAX_EVAL_TIME: f64 = 1.0 - 1e-9;

/// A conditioned, time-dependent velocity field.
///
/// Implementations are immutable after construction and safe to evaluate
/// from concurrent tasks; the evaluation counter is updated atomically and
/// aggregate counts are exact regardless of interleaving.
pub trait VelocityField: Send + Sync {
    /// State dimension d.
    fn dim(&self) -> usize;

    /// Expected condition payload length.
    fn condition_dim(&self) -> usize;

    /// Velocity at (x, t) under the given conditioning. The output has the
    /// same length as `x` and is finite for finite input and t in
    /// [0, [`MAX_EVAL_TIME`]].
    fn evaluate(&self, x: &[f64], t: f64, condition: &Condition) -> Result<Vec<f64>>;

    /// Number of `evaluate` calls made so far; increases by exactly one per
    /// call.
    fn eval_count(&self) -> u64;

    /// Whether evaluations of this field are excluded from model NFE totals.
    /// True only for model-free fields constructed as free.
    fn nfe_free(&self) -> bool {
        false
    }

    /// The affine coefficients behind this field, when it has an exact
    /// closed-form flow.
    fn as_affine(&self) -> Option<&AffineFieldSpec> {
        None
    }
}

/// Atomic evaluation counter shared by all field implementations.
#[derive(Debug, Default)]
pub(crate) struct EvalCounter(AtomicU64);

impl EvalCounter {
    pub fn new() -> Self {
        Self(AtomicU64::new(0))
    }

    pub fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Validates an evaluation site: finite state of the right dimension and a
/// time inside the guarded interval.
pub(crate) fn check_eval_site(dim: usize, x: &[f64], t: f64) -> Result<()> {
    if x.len() != dim {
        return Err(FlowError::DimensionMismatch {
            expected: dim,
            got: x.len(),
        });
    }
    if !t.is_finite() || t < 0.0 {
        return Err(FlowError::TimeOutOfRange(t));
    }
    if t > MAX_EVAL_TIME {
        return Err(FlowError::SingularTime(t));
    }
    Ok(())
}

/// Validates a condition payload against the field's declared dimension.
pub(crate) fn check_condition(condition_dim: usize, condition: &Condition) -> Result<()> {
    if let Some(p) = condition.payload() {
        if p.len() != condition_dim {
            return Err(FlowError::ConditionDimension {
                expected: condition_dim,
                got: p.len(),
            });
        }
    }
    Ok(())
}

/// Serializable description of a field. Weights of the nonlinear field are
/// regenerated from the seed, never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FieldSpec {
    Constant {
        values: Vec<f64>,
        #[serde(default)]
        condition_dim: Option<usize>,
    },
    Deterministic {
        target: Vec<f64>,
        #[serde(default)]
        free: bool,
    },
    Affine(AffineFieldSpec),
    Smooth(SmoothRandomFieldSpec),
}

impl FieldSpec {
    pub fn build(&self) -> Result<Box<dyn VelocityField>> {
        match self {
            FieldSpec::Constant {
                values,
                condition_dim,
            } => Ok(Box::new(ConstantField::with_condition_dim(
                values.clone(),
                condition_dim.unwrap_or(values.len()),
            )?)),
            FieldSpec::Deterministic { target, free } => {
                let f = if *free {
                    DeterministicTargetField::free(target.clone())?
                } else {
                    DeterministicTargetField::new(target.clone())?
                };
                Ok(Box::new(f))
            }
            FieldSpec::Affine(spec) => Ok(Box::new(AffineField::new(spec.clone())?)),
            FieldSpec::Smooth(spec) => Ok(Box::new(SmoothRandomField::new(spec.clone())?)),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            FieldSpec::Constant { .. } => "constant",
            FieldSpec::Deterministic { .. } => "deterministic",
            FieldSpec::Affine(_) => "affine",
            FieldSpec::Smooth(_) => "smooth",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_site_guard() {
        assert!(check_eval_site(2, &[1.0, 2.0], 0.0).is_ok());
        assert!(check_eval_site(2, &[1.0, 2.0], MAX_EVAL_TIME).is_ok());
        assert!(matches!(
            check_eval_site(2, &[1.0, 2.0], 1.0),
            Err(FlowError::SingularTime(_))
        ));
        assert!(matches!(
            check_eval_site(2, &[1.0, 2.0], 1.0 - 1e-10),
            Err(FlowError::SingularTime(_))
        ));
        assert!(check_eval_site(2, &[1.0, 2.0], -0.1).is_err());
        assert!(check_eval_site(2, &[1.0], 0.5).is_err());
    }

    #[test]
    fn condition_dim_guard() {
        assert!(check_condition(3, &Condition::None).is_ok());
        assert!(check_condition(3, &Condition::Source(vec![0.0; 3])).is_ok());
        assert!(matches!(
            check_condition(3, &Condition::Reference(vec![0.0; 2])),
            Err(FlowError::ConditionDimension {
                expected: 3,
                got: 2
            })
        ));
    }

    #[test]
    fn field_spec_json_round_trip() {
        let spec = FieldSpec::Smooth(SmoothRandomFieldSpec {
            seed: 11,
            hidden_width: 8,
            gain: 0.5,
            dim: 3,
            condition_dim: 3,
        });
        let json = serde_json::to_string(&spec).unwrap();
        let back: FieldSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
        assert_eq!(back.kind(), "smooth");
    }
}
