//! Time discretization of the unit interval.

use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};

/// Strictly increasing timesteps t_0 = 0 < t_1 < ... < t_n = 1.
///
/// Non-uniform monotone grids are accepted anywhere a grid is; defaults and
/// fixtures use [`TimeGrid::uniform`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid with `n` steps: t_i = i / n.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(FlowError::InvalidGrid(
                "step count must be at least 1".into(),
            ));
        }
        let times = (0..=n).map(|i| i as f64 / n as f64).collect();
        Self::from_times(times)
    }

    /// Builds a grid from explicit node times, validating the invariants.
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(FlowError::InvalidGrid("need at least two nodes".into()));
        }
        if times[0] != 0.0 {
            return Err(FlowError::InvalidGrid(format!(
                "t_0 must be exactly 0, got {}",
                times[0]
            )));
        }
        if *times.last().unwrap() != 1.0 {
            return Err(FlowError::InvalidGrid(format!(
                "t_n must be exactly 1, got {}",
                times.last().unwrap()
            )));
        }
        for w in times.windows(2) {
            if !w[1].is_finite() || w[1] <= w[0] {
                return Err(FlowError::InvalidGrid(format!(
                    "nodes must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { times })
    }

    /// Number of steps n (one less than the node count).
    pub fn n(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn node(&self, i: usize) -> f64 {
        self.times[i]
    }

    /// Step width delta_i = t_{i+1} - t_i.
    pub fn delta(&self, i: usize) -> f64 {
        self.times[i + 1] - self.times[i]
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = FlowError;

    fn try_from(times: Vec<f64>) -> Result<Self> {
        Self::from_times(times)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(grid: TimeGrid) -> Self {
        grid.times
    }
}
