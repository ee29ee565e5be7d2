//! Mask-guided selective denoising: spatially blended second-stage updates.
//!
//! Inside the mask the model velocity applies unchanged; outside it is
//! blended with the model-free velocity pointing at the source, so the
//! background is transported back onto the source while the masked region is
//! edited.

use crate::error::{FlowError, Result};
use crate::fields::VelocityField;
use crate::grid::TimeGrid;
use crate::reinversion::{run_stage1, transition_index, EditConfig, EditMethod, EditOutcome};
use crate::solver::Trajectory;
use crate::state::{Condition, LatentState, Mask};

/// Times at or beyond this bound make the source-seeking velocity singular.
pub const MSD_MAX_TIME: f64 = 1.0 - 1e-12;

/// Per-coordinate blend of the model velocity with the source-seeking
/// velocity v* = (source - state) / (1 - t).
///
/// Where the mask is 1 the result is the model velocity, bit for bit; where
/// it is 0 the result is eta * v* + (1 - eta) * model velocity. Fractional
/// mask values interpolate the two branches linearly. With eta = 0 the blend
/// collapses to the model velocity for every mask.
pub fn msd_velocity(
    model_v: &[f64],
    state: &[f64],
    source: &[f64],
    t: f64,
    mask: &Mask,
    eta: f64,
) -> Result<Vec<f64>> {
    let d = model_v.len();
    for other in [state.len(), source.len(), mask.len()] {
        if other != d {
            return Err(FlowError::DimensionMismatch {
                expected: d,
                got: other,
            });
        }
    }
    if !t.is_finite() || t < 0.0 {
        return Err(FlowError::TimeOutOfRange(t));
    }
    if t >= MSD_MAX_TIME {
        return Err(FlowError::SingularTime(t));
    }
    if !eta.is_finite() || !(0.0..=1.0).contains(&eta) {
        return Err(FlowError::InvalidArgument("eta must lie in [0, 1]"));
    }
    if eta == 0.0 {
        return Ok(model_v.to_vec());
    }
    let inv = 1.0 / (1.0 - t);
    Ok((0..d)
        .map(|j| {
            let m = mask.values()[j];
            if m == 1.0 {
                return model_v[j];
            }
            let v_star = (source[j] - state[j]) * inv;
            let background = eta * v_star + (1.0 - eta) * model_v[j];
            if m == 0.0 {
                background
            } else {
                m * model_v[j] + (1.0 - m) * background
            }
        })
        .collect())
}

/// Two-stage edit with mask-guided selective denoising in the second stage.
///
/// Identical to the plain two-stage edit through stage 1; every second-stage
/// step blends the reference-conditioned model velocity through
/// [`msd_velocity`]. The source-seeking velocity is free, so the NFE count
/// matches the unmasked pipeline.
pub fn msd_edit(
    field: &dyn VelocityField,
    source: &[f64],
    reference: &[f64],
    grid: &TimeGrid,
    config: &EditConfig,
    mask: &Mask,
) -> Result<EditOutcome> {
    config.validate()?;
    let tau = transition_index(grid, config.t_tau)?;
    if source.len() != field.dim() {
        return Err(FlowError::DimensionMismatch {
            expected: field.dim(),
            got: source.len(),
        });
    }
    if mask.len() != field.dim() {
        return Err(FlowError::DimensionMismatch {
            expected: field.dim(),
            got: mask.len(),
        });
    }
    let before = field.eval_count();

    let noise = crate::prior::PriorSampler::new(config.seed).sample(field.dim())?;
    let stage1 = run_stage1(field, source, grid, config, &noise, tau)?;

    let n = grid.n();
    let condition = Condition::Reference(reference.to_vec());
    let mut states = vec![stage1.terminal().clone()];
    let mut velocities = Vec::with_capacity(n - tau);
    let mut x = stage1.terminal().values().to_vec();
    for i in tau..n {
        let t = grid.node(i);
        let model_v = field.evaluate(&x, t, &condition)?;
        if !model_v.iter().all(|v| v.is_finite()) {
            return Err(FlowError::Diverged { step: i });
        }
        let v = msd_velocity(&model_v, &x, source, t, mask, config.eta)?;
        let dt = grid.delta(i);
        for (xj, vj) in x.iter_mut().zip(&v) {
            *xj += dt * vj;
        }
        if !x.iter().all(|xi| xi.is_finite()) {
            return Err(FlowError::Diverged { step: i });
        }
        velocities.push(v);
        states.push(LatentState::new(x.clone(), grid.node(i + 1))?);
    }
    let stage2 = Trajectory::from_parts(states, velocities, grid.clone(), condition, tau);

    let trajectory = Trajectory::stitch(stage1, stage2)?;
    Ok(EditOutcome {
        method: EditMethod::Msd,
        edited: trajectory.terminal().clone(),
        trajectory,
        nfe: crate::reinversion::counted_nfe(field, before),
        stage_boundary: tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_blob_grid, make_box_mask};
    use crate::fields::{SmoothRandomField, SmoothRandomFieldSpec};
    use crate::reinversion::reinversion_edit;
    use crate::state::GridShape;

    fn smooth(dim: usize, gain: f64) -> SmoothRandomField {
        SmoothRandomField::new(SmoothRandomFieldSpec {
            seed: 13,
            hidden_width: 24,
            gain,
            dim,
            condition_dim: dim,
        })
        .unwrap()
    }

    fn config(eta: f64) -> EditConfig {
        EditConfig {
            t_tau: 0.2,
            eta,
            deterministic_stage1: false,
            seed: 3,
        }
    }

    #[test]
    fn blend_hand_fixture() {
        // Masked entry keeps the model velocity; unmasked gets (4-0)/0.8 = 5.
        let mask = Mask::new(vec![1.0, 0.0]).unwrap();
        let v = msd_velocity(&[1.0, 1.0], &[0.0, 0.0], &[4.0, 4.0], 0.2, &mask, 1.0).unwrap();
        assert_eq!(v, vec![1.0, 5.0]);
    }

    #[test]
    fn eta_zero_returns_model_velocity_unchanged() {
        let mask = Mask::new(vec![0.0, 0.5, 1.0]).unwrap();
        let model = vec![0.3, -0.7, 2.0];
        let v = msd_velocity(&model, &[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0], 0.5, &mask, 0.0).unwrap();
        assert_eq!(v, model);
    }

    #[test]
    fn all_ones_mask_returns_model_velocity_unchanged() {
        let mask = Mask::ones(2).unwrap();
        let model = vec![1.5, -2.5];
        for eta in [0.0, 0.3, 1.0] {
            let v = msd_velocity(&model, &[9.0, 9.0], &[0.0, 0.0], 0.9, &mask, eta).unwrap();
            assert_eq!(v, model);
        }
    }

    #[test]
    fn blend_is_a_pure_function() {
        let mask = Mask::new(vec![0.25, 0.75]).unwrap();
        let args = (&[1.0, 2.0][..], &[0.5, 0.5][..], &[3.0, -3.0][..], 0.4, 0.6);
        let a = msd_velocity(args.0, args.1, args.2, args.3, &mask, args.4).unwrap();
        let b = msd_velocity(args.0, args.1, args.2, args.3, &mask, args.4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn blend_rejects_singular_time_and_bad_eta() {
        let mask = Mask::ones(1).unwrap();
        assert!(matches!(
            msd_velocity(&[1.0], &[0.0], &[1.0], 1.0, &mask, 1.0),
            Err(FlowError::SingularTime(_))
        ));
        assert!(msd_velocity(&[1.0], &[0.0], &[1.0], 0.5, &mask, 1.5).is_err());
        assert!(msd_velocity(&[1.0], &[0.0, 1.0], &[1.0], 0.5, &mask, 0.5).is_err());
    }

    #[test]
    fn all_ones_mask_matches_plain_edit_bitwise() {
        let f = smooth(4, 0.9);
        let grid = TimeGrid::uniform(9).unwrap();
        let source = vec![0.4, -0.6, 1.0, 0.0];
        let reference = vec![1.0, 0.2, -0.2, 0.5];
        let cfg = config(0.7);
        let masked = msd_edit(
            &f,
            &source,
            &reference,
            &grid,
            &cfg,
            &Mask::ones(4).unwrap(),
        )
        .unwrap();
        let plain = reinversion_edit(&f, &source, &reference, &grid, &cfg).unwrap();
        assert_eq!(masked.edited.values(), plain.edited.values());
        assert_eq!(masked.nfe, plain.nfe);
    }

    #[test]
    fn eta_zero_matches_plain_edit_bitwise() {
        let f = smooth(4, 0.9);
        let grid = TimeGrid::uniform(9).unwrap();
        let source = vec![0.4, -0.6, 1.0, 0.0];
        let reference = vec![1.0, 0.2, -0.2, 0.5];
        let cfg = config(0.0);
        let mask = Mask::new(vec![1.0, 0.0, 0.5, 0.0]).unwrap();
        let masked = msd_edit(&f, &source, &reference, &grid, &cfg, &mask).unwrap();
        let plain = reinversion_edit(&f, &source, &reference, &grid, &cfg).unwrap();
        assert_eq!(masked.edited.values(), plain.edited.values());
    }

    #[test]
    fn all_zero_mask_with_full_eta_lands_on_source() {
        // Pure v* in stage 2 transports every coordinate onto the source
        // regardless of where stage 1 ended.
        let f = smooth(3, 1.5);
        let grid = TimeGrid::uniform(12).unwrap();
        let source = vec![2.0, -1.0, 0.25];
        let reference = vec![0.0, 0.0, 5.0];
        let out = msd_edit(
            &f,
            &source,
            &reference,
            &grid,
            &config(1.0),
            &Mask::zeros(3).unwrap(),
        )
        .unwrap();
        for (got, want) in out.edited.values().iter().zip(&source) {
            assert!(
                (got - want).abs() <= 1e-9 * want.abs().max(1.0),
                "{got} vs {want}"
            );
        }
    }

    #[test]
    fn box_mask_preserves_background_and_edits_foreground() {
        let shape = GridShape::new(16, 16).unwrap();
        let source = make_blob_grid(shape, (8, 8), 3.0, 2.0).unwrap();
        let reference = make_blob_grid(shape, (4, 4), 2.0, -1.5).unwrap();
        let mask = make_box_mask(shape, 5, 5, 6, 6).unwrap();
        let f = smooth(256, 1.0);
        let grid = TimeGrid::uniform(18).unwrap();
        let out = msd_edit(
            &f,
            source.values(),
            reference.values(),
            &grid,
            &config(1.0),
            &mask,
        )
        .unwrap();
        let mut max_masked_dev = 0.0f64;
        for j in 0..256 {
            let dev = (out.edited.values()[j] - source.values()[j]).abs();
            if mask.values()[j] == 0.0 {
                assert!(
                    dev <= 1e-9 * source.values()[j].abs().max(1.0),
                    "coord {j}: {dev}"
                );
            } else {
                max_masked_dev = max_masked_dev.max(dev);
            }
        }
        assert!(
            max_masked_dev > 1e-3,
            "mask region barely edited: {max_masked_dev}"
        );
    }

    #[test]
    fn background_deviation_shrinks_with_eta() {
        let shape = GridShape::new(16, 16).unwrap();
        let source = make_blob_grid(shape, (8, 8), 3.0, 2.0).unwrap();
        let reference = make_blob_grid(shape, (11, 11), 2.0, 1.0).unwrap();
        let mask = make_box_mask(shape, 6, 6, 5, 5).unwrap();
        let f = smooth(256, 1.0);
        let grid = TimeGrid::uniform(18).unwrap();
        let mut deviations = Vec::new();
        for eta in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let out = msd_edit(
                &f,
                source.values(),
                reference.values(),
                &grid,
                &config(eta),
                &mask,
            )
            .unwrap();
            let dev: f64 = (0..256)
                .filter(|&j| mask.values()[j] == 0.0)
                .map(|j| (out.edited.values()[j] - source.values()[j]).powi(2))
                .sum::<f64>()
                .sqrt();
            deviations.push(dev);
        }
        for w in deviations.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-12,
                "background deviation not non-increasing: {deviations:?}"
            );
        }
        assert!(deviations[4] < 1e-9);
    }
}
