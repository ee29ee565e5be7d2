//! Affine velocity family v(x, t; c) = a(t)·x + B·c + b0.
//!
//! The time coefficient a(t) is piecewise linear between node values on its
//! own grid, so the linear ODE driven by this field has an exact flow (see
//! the solver module). Conditioning enters as the additive offset B·c.

use serde::{Deserialize, Serialize};

use super::{check_condition, check_eval_site, EvalCounter, VelocityField};
use crate::error::{FlowError, Result};
use crate::grid::TimeGrid;
use crate::state::Condition;

/// Coefficients of an affine field.
///
/// `a_values` holds a(t) at the nodes of `a_grid` and is interpolated
/// linearly in between. `b` maps a condition payload to a d-length offset;
/// `None` means the field ignores conditioning (B = 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineFieldSpec {
    pub a_grid: TimeGrid,
    pub a_values: Vec<f64>,
    pub b0: Vec<f64>,
    #[serde(default)]
    pub b: Option<Vec<Vec<f64>>>,
    pub condition_dim: usize,
}

impl AffineFieldSpec {
    /// Field with constant a(t) = a and no conditioning offset.
    pub fn constant_a(a: f64, b0: Vec<f64>) -> Result<Self> {
        let d = b0.len();
        let spec = Self {
            a_grid: TimeGrid::uniform(1)?,
            a_values: vec![a, a],
            b0,
            b: None,
            condition_dim: d,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.b0.is_empty() {
            return Err(FlowError::InvalidDimension);
        }
        if self.a_values.len() != self.a_grid.times().len() {
            return Err(FlowError::DimensionMismatch {
                expected: self.a_grid.times().len(),
                got: self.a_values.len(),
            });
        }
        if !self.a_values.iter().all(|v| v.is_finite()) || !self.b0.iter().all(|v| v.is_finite()) {
            return Err(FlowError::NonFinite("affine coefficients"));
        }
        if let Some(b) = &self.b {
            if b.len() != self.b0.len() {
                return Err(FlowError::DimensionMismatch {
                    expected: self.b0.len(),
                    got: b.len(),
                });
            }
            for row in b {
                if row.len() != self.condition_dim {
                    return Err(FlowError::DimensionMismatch {
                        expected: self.condition_dim,
                        got: row.len(),
                    });
                }
                if !row.iter().all(|v| v.is_finite()) {
                    return Err(FlowError::NonFinite("affine condition matrix"));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.b0.len()
    }

    /// a(t) by linear interpolation of the node values. `t` is clamped to
    /// [0, 1].
    pub fn a_at(&self, t: f64) -> f64 {
        let times = self.a_grid.times();
        let t = t.clamp(0.0, 1.0);
        let seg = match times.binary_search_by(|node| node.partial_cmp(&t).unwrap()) {
            Ok(i) => return self.a_values[i],
            Err(i) => i - 1, // t strictly between times[i-1] and times[i]
        };
        let (t0, t1) = (times[seg], times[seg + 1]);
        let w = (t - t0) / (t1 - t0);
        self.a_values[seg] * (1.0 - w) + self.a_values[seg + 1] * w
    }

    /// Exact integral of the piecewise-linear a over [t_from, t_to]
    /// (trapezoid per segment, which is exact for linear pieces).
    pub fn a_integral(&self, t_from: f64, t_to: f64) -> f64 {
        if t_to < t_from {
            return -self.a_integral(t_to, t_from);
        }
        let times = self.a_grid.times();
        let mut total = 0.0;
        for i in 0..self.a_grid.n() {
            let lo = times[i].max(t_from);
            let hi = times[i + 1].min(t_to);
            if hi <= lo {
                continue;
            }
            total += 0.5 * (self.a_at(lo) + self.a_at(hi)) * (hi - lo);
        }
        total
    }

    /// The constant-in-time offset B·c + b0 under the given conditioning.
    pub fn offset(&self, condition: &Condition) -> Result<Vec<f64>> {
        check_condition(self.condition_dim, condition)?;
        let mut out = self.b0.clone();
        if let (Some(b), Some(payload)) = (&self.b, condition.payload()) {
            for (o, row) in out.iter_mut().zip(b) {
                *o += row.iter().zip(payload).map(|(w, c)| w * c).sum::<f64>();
            }
        }
        Ok(out)
    }
}

/// Evaluation wrapper over an [`AffineFieldSpec`].
#[derive(Debug)]
pub struct AffineField {
    spec: AffineFieldSpec,
    counter: EvalCounter,
}

impl AffineField {
    pub fn new(spec: AffineFieldSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            counter: EvalCounter::new(),
        })
    }

    pub fn spec(&self) -> &AffineFieldSpec {
        &self.spec
    }
}

impl VelocityField for AffineField {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn condition_dim(&self) -> usize {
        self.spec.condition_dim
    }

    fn evaluate(&self, x: &[f64], t: f64, condition: &Condition) -> Result<Vec<f64>> {
        check_eval_site(self.dim(), x, t)?;
        let offset = self.spec.offset(condition)?;
        self.counter.bump();
        let a = self.spec.a_at(t);
        Ok(x.iter().zip(&offset).map(|(xi, k)| a * xi + k).collect())
    }

    fn eval_count(&self) -> u64 {
        self.counter.get()
    }

    fn as_affine(&self) -> Option<&AffineFieldSpec> {
        Some(&self.spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x_field() -> AffineField {
        // v(x, t) = x
        AffineField::new(AffineFieldSpec::constant_a(1.0, vec![0.0]).unwrap()).unwrap()
    }

    #[test]
    fn identity_coefficient_returns_state() {
        let f = x_field();
        let v = f.evaluate(&[1.0], 0.3, &Condition::None).unwrap();
        assert_eq!(v, vec![1.0]);
    }

    #[test]
    fn interpolates_a_linearly() {
        let spec = AffineFieldSpec {
            a_grid: TimeGrid::from_times(vec![0.0, 0.5, 1.0]).unwrap(),
            a_values: vec![0.0, 1.0, 0.0],
            b0: vec![0.0],
            b: None,
            condition_dim: 1,
        };
        assert_eq!(spec.a_at(0.0), 0.0);
        assert_eq!(spec.a_at(0.5), 1.0);
        assert!((spec.a_at(0.25) - 0.5).abs() < 1e-15);
        assert!((spec.a_at(0.75) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn integral_is_exact_on_linear_pieces() {
        // a(t) = t on [0,1]: integral over [0, t] is t^2/2.
        let spec = AffineFieldSpec {
            a_grid: TimeGrid::uniform(1).unwrap(),
            a_values: vec![0.0, 1.0],
            b0: vec![0.0],
            b: None,
            condition_dim: 1,
        };
        assert!((spec.a_integral(0.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((spec.a_integral(0.0, 0.6) - 0.18).abs() < 1e-15);
        assert!((spec.a_integral(0.2, 0.6) - (0.18 - 0.02)).abs() < 1e-15);
        assert_eq!(spec.a_integral(0.4, 0.4), 0.0);
    }

    #[test]
    fn condition_offset_applies_matrix() {
        let spec = AffineFieldSpec {
            a_grid: TimeGrid::uniform(1).unwrap(),
            a_values: vec![0.0, 0.0],
            b0: vec![1.0, 2.0],
            b: Some(vec![vec![1.0, 0.0], vec![0.0, -1.0]]),
            condition_dim: 2,
        };
        let off = spec.offset(&Condition::Source(vec![3.0, 4.0])).unwrap();
        assert_eq!(off, vec![4.0, -2.0]);
        let off = spec.offset(&Condition::None).unwrap();
        assert_eq!(off, vec![1.0, 2.0]);
    }

    #[test]
    fn payload_length_mismatch_is_an_error() {
        let f =
            AffineField::new(AffineFieldSpec::constant_a(1.0, vec![0.0, 0.0]).unwrap()).unwrap();
        assert!(matches!(
            f.evaluate(&[0.0, 0.0], 0.1, &Condition::Source(vec![1.0])),
            Err(FlowError::ConditionDimension { .. })
        ));
    }
}
