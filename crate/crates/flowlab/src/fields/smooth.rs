//! Opaque nonlinear field with fixed random weights.
//!
//! A two-layer tanh network over the concatenated input (x, t, condition
//! payload or zeros). Weights are drawn once from a seeded generator and
//! never trained, so the field is deterministic given its spec and Lipschitz
//! in x for fixed t.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_condition, check_eval_site, EvalCounter, VelocityField};
use crate::error::{FlowError, Result};
use crate::state::Condition;

/// Everything needed to regenerate the field; weights are never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothRandomFieldSpec {
    pub seed: u64,
    pub hidden_width: usize,
    pub gain: f64,
    pub dim: usize,
    pub condition_dim: usize,
}

impl SmoothRandomFieldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden_width == 0 {
            return Err(FlowError::InvalidDimension);
        }
        if !self.gain.is_finite() {
            return Err(FlowError::NonFinite("gain"));
        }
        Ok(())
    }

    fn input_dim(&self) -> usize {
        self.dim + 1 + self.condition_dim
    }
}

/// v(x, t; c) = gain * (W2 tanh(W1 z + c1) + c2) with z = (x, t, payload).
#[derive(Debug)]
pub struct SmoothRandomField {
    spec: SmoothRandomFieldSpec,
    w1: Vec<f64>, // hidden_width x input_dim, row major
    c1: Vec<f64>,
    w2: Vec<f64>, // dim x hidden_width, row major
    c2: Vec<f64>,
    counter: EvalCounter,
}

impl SmoothRandomField {
    pub fn new(spec: SmoothRandomFieldSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let in_dim = spec.input_dim();
        let h = spec.hidden_width;
        let s1 = 1.0 / (in_dim as f64).sqrt();
        let s2 = 1.0 / (h as f64).sqrt();
        let mut draw = |n: usize, scale: f64| -> Vec<f64> {
            (0..n)
                .map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng) * scale)
                .collect()
        };
        let w1 = draw(h * in_dim, s1);
        let c1 = draw(h, s1);
        let w2 = draw(spec.dim * h, s2);
        let c2 = draw(spec.dim, s2);
        Ok(Self {
            spec,
            w1,
            c1,
            w2,
            c2,
            counter: EvalCounter::new(),
        })
    }

    pub fn spec(&self) -> &SmoothRandomFieldSpec {
        &self.spec
    }

    fn input_vector(&self, x: &[f64], t: f64, condition: &Condition) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.spec.input_dim());
        z.extend_from_slice(x);
        z.push(t);
        match condition.payload() {
            Some(p) => z.extend_from_slice(p),
            None => z.extend(std::iter::repeat_n(0.0, self.spec.condition_dim)),
        }
        z
    }

    /// Hidden pre-activation W1 z + c1.
    fn hidden(&self, z: &[f64]) -> Vec<f64> {
        let in_dim = self.spec.input_dim();
        self.c1
            .iter()
            .enumerate()
            .map(|(k, c)| {
                c + self.w1[k * in_dim..(k + 1) * in_dim]
                    .iter()
                    .zip(z)
                    .map(|(w, zi)| w * zi)
                    .sum::<f64>()
            })
            .collect()
    }

    /// Analytic Jacobian dv/dx at (x, t, condition).
    ///
    /// J[i][j] = gain * sum_k W2[i,k] * (1 - tanh^2(h_k)) * W1[k,j], using
    /// only the first `dim` input columns of W1 (those fed by x).
    pub fn jacobian_x(&self, x: &[f64], t: f64, condition: &Condition) -> Result<Vec<Vec<f64>>> {
        check_eval_site(self.spec.dim, x, t)?;
        check_condition(self.spec.condition_dim, condition)?;
        let z = self.input_vector(x, t, condition);
        let pre = self.hidden(&z);
        let sech2: Vec<f64> = pre.iter().map(|p| 1.0 - p.tanh() * p.tanh()).collect();
        let in_dim = self.spec.input_dim();
        let h = self.spec.hidden_width;
        let d = self.spec.dim;
        let mut jac = vec![vec![0.0; d]; d];
        for (i, row) in jac.iter_mut().enumerate() {
            for (j, out) in row.iter_mut().enumerate() {
                *out = self.spec.gain
                    * (0..h)
                        .map(|k| self.w2[i * h + k] * sech2[k] * self.w1[k * in_dim + j])
                        .sum::<f64>();
            }
        }
        Ok(jac)
    }
}

impl VelocityField for SmoothRandomField {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn condition_dim(&self) -> usize {
        self.spec.condition_dim
    }

    fn evaluate(&self, x: &[f64], t: f64, condition: &Condition) -> Result<Vec<f64>> {
        check_eval_site(self.spec.dim, x, t)?;
        check_condition(self.spec.condition_dim, condition)?;
        self.counter.bump();
        let z = self.input_vector(x, t, condition);
        let act: Vec<f64> = self.hidden(&z).iter().map(|p| p.tanh()).collect();
        let h = self.spec.hidden_width;
        Ok(self
            .c2
            .iter()
            .enumerate()
            .map(|(i, c)| {
                self.spec.gain
                    * (c + self.w2[i * h..(i + 1) * h]
                        .iter()
                        .zip(&act)
                        .map(|(w, a)| w * a)
                        .sum::<f64>())
            })
            .collect())
    }

    fn eval_count(&self) -> u64 {
        self.counter.get()
    }
}
