//! Distances and drift curves used by tests, verification, and the CLI.

use crate::error::{FlowError, Result};
use crate::inversion::InversionReport;
use crate::solver::Trajectory;

/// Euclidean distance between two equal-length value sequences.
pub fn l2(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(FlowError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Mean absolute per-coordinate deviation.
pub fn mean_abs(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(FlowError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Per-node distance between a backward pass and the matching forward
/// trajectory: one (t_i, ||backward_i - forward_i||) point per grid node.
pub fn drift_curve(report: &InversionReport, forward: &Trajectory) -> Result<Vec<(f64, f64)>> {
    if !forward.is_full() || report.intermediate_states.len() != forward.states().len() {
        return Err(FlowError::GridMismatch);
    }
    report
        .intermediate_states
        .iter()
        .zip(forward.states())
        .map(|(b, f)| {
            if b.time() != f.time() {
                return Err(FlowError::GridMismatch);
            }
            Ok((f.time(), l2(b.values(), f.values())?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{AffineField, AffineFieldSpec, ConstantField};
    use crate::grid::TimeGrid;
    use crate::inversion::{recon_invert, vanilla_invert};
    use crate::prior::PriorSampler;
    use crate::solver::euler_sample;
    use crate::state::{Condition, LatentState};

    #[test]
    fn l2_basics() {
        assert_eq!(l2(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(l2(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(l2(&[1.0], &[0.5625]).unwrap(), 0.4375);
        assert!(l2(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn l2_symmetry() {
        let a = [0.3, -2.0, 4.5];
        let b = [1.0, 0.0, -4.5];
        assert_eq!(l2(&a, &b).unwrap(), l2(&b, &a).unwrap());
    }

    #[test]
    fn mean_abs_basics() {
        assert_eq!(mean_abs(&[7.0, -1.0], &[7.0, -1.0]).unwrap(), 0.0);
        assert_eq!(mean_abs(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        let a = [0.0; 4];
        let b = [0.016; 4];
        assert!((mean_abs(&a, &b).unwrap() - 0.016).abs() < 1e-15);
    }

    #[test]
    fn drift_of_vanilla_on_the_hand_fixture() {
        let f = AffineField::new(AffineFieldSpec::constant_a(1.0, vec![0.0]).unwrap()).unwrap();
        let grid = TimeGrid::uniform(2).unwrap();
        let start = LatentState::new(vec![1.0], 0.0).unwrap();
        let forward = euler_sample(&f, &start, &grid, &Condition::None).unwrap();
        let report = vanilla_invert(&f, forward.terminal(), &grid, &Condition::None).unwrap();
        let curve = drift_curve(&report, &forward).unwrap();
        let expect = [(0.0, 0.4375), (0.5, 0.375), (1.0, 0.0)];
        for ((t, v), (te, ve)) in curve.iter().zip(expect) {
            assert_eq!(*t, te);
            assert!((v - ve).abs() < 1e-14, "t={t}: {v} vs {ve}");
        }
    }

    #[test]
    fn drift_all_zero_for_exact_recon() {
        let f =
            AffineField::new(AffineFieldSpec::constant_a(1.0, vec![0.0, 0.0]).unwrap()).unwrap();
        let grid = TimeGrid::uniform(4).unwrap();
        let start = PriorSampler::new(11).sample(2).unwrap();
        let forward = euler_sample(&f, &start, &grid, &Condition::None).unwrap();
        let mut sampler = PriorSampler::new(11);
        let (report, _) = recon_invert(&f, forward.terminal(), &mut sampler, &grid).unwrap();
        for (_, v) in drift_curve(&report, &forward).unwrap() {
            assert!(v < 1e-12);
        }
    }

    #[test]
    fn drift_all_zero_for_zero_field() {
        let f = ConstantField::new(vec![0.0, 0.0]).unwrap();
        let grid = TimeGrid::uniform(3).unwrap();
        let start = LatentState::new(vec![1.0, -2.0], 0.0).unwrap();
        let forward = euler_sample(&f, &start, &grid, &Condition::None).unwrap();
        let report = vanilla_invert(&f, forward.terminal(), &grid, &Condition::None).unwrap();
        for (_, v) in drift_curve(&report, &forward).unwrap() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn drift_curve_rejects_grid_mismatch() {
        let f = ConstantField::new(vec![0.0]).unwrap();
        let start = LatentState::new(vec![1.0], 0.0).unwrap();
        let forward =
            euler_sample(&f, &start, &TimeGrid::uniform(3).unwrap(), &Condition::None).unwrap();
        let report = vanilla_invert(
            &f,
            &LatentState::new(vec![1.0], 1.0).unwrap(),
            &TimeGrid::uniform(4).unwrap(),
            &Condition::None,
        )
        .unwrap();
        assert!(drift_curve(&report, &forward).is_err());
    }

    #[test]
    fn vanilla_drift_accumulates_backward() {
        // On a curvature fixture the backward error grows toward t = 0.
        let f = AffineField::new(AffineFieldSpec::constant_a(1.0, vec![0.0; 3]).unwrap()).unwrap();
        let grid = TimeGrid::uniform(8).unwrap();
        let start = LatentState::new(vec![1.0, -0.5, 2.0], 0.0).unwrap();
        let forward = euler_sample(&f, &start, &grid, &Condition::None).unwrap();
        let report = vanilla_invert(&f, forward.terminal(), &grid, &Condition::None).unwrap();
        let curve = drift_curve(&report, &forward).unwrap();
        for w in curve.windows(2) {
            assert!(
                w[0].1 >= w[1].1 - 1e-15,
                "drift not accumulating backward: {w:?}"
            );
        }
    }
}
