//! Property tests for the invariants that hold across all inputs.

use proptest::prelude::*;

use flowlab::fields::{AffineField, AffineFieldSpec, SmoothRandomField, SmoothRandomFieldSpec};
use flowlab::inversion::{error_identity_gap, recon_invert};
use flowlab::io::{read_state, write_state};
use flowlab::metrics::l2;
use flowlab::msd::msd_velocity;
use flowlab::solver::euler_sample;
use flowlab::{Condition, GridShape, LatentState, Mask, PriorSampler, TimeGrid, VelocityField};

/// Strictly increasing interior nodes in (0, 1).
fn monotone_grid() -> impl Strategy<Value = TimeGrid> {
    proptest::collection::btree_set(1u32..1000, 0..12).prop_map(|interior| {
        let mut times = vec![0.0];
        times.extend(interior.into_iter().map(|k| k as f64 / 1000.0));
        times.push(1.0);
        TimeGrid::from_times(times).unwrap()
    })
}

fn finite_values(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1e3..1e3f64, len)
}

proptest! {
    #[test]
    fn grid_deltas_sum_to_one(grid in monotone_grid()) {
        let sum: f64 = (0..grid.n()).map(|i| grid.delta(i)).sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn state_file_round_trip_is_bit_exact(
        values in finite_values(1..32),
        time in 0.0..=1.0f64,
        gridded in any::<bool>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.fls");
        let state = if gridded {
            let shape = GridShape::new(1, values.len()).unwrap();
            LatentState::with_shape(values, time, shape).unwrap()
        } else {
            LatentState::new(values, time).unwrap()
        };
        write_state(&path, &state).unwrap();
        let back = read_state(&path).unwrap();
        prop_assert_eq!(back.time().to_bits(), state.time().to_bits());
        prop_assert_eq!(back.shape(), state.shape());
        for (a, b) in state.values().iter().zip(back.values()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn prior_sampling_is_reproducible(seed in any::<u64>(), d in 1usize..64) {
        let a = PriorSampler::new(seed).sample(d).unwrap();
        let b = PriorSampler::new(seed).sample(d).unwrap();
        prop_assert_eq!(a.values(), b.values());
    }

    #[test]
    fn l2_triangle_inequality(
        a in finite_values(3..4),
        b in finite_values(3..4),
        c in finite_values(3..4),
    ) {
        let ab = l2(&a, &b).unwrap();
        let bc = l2(&b, &c).unwrap();
        let ac = l2(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn trajectory_replay_reproduces_states(
        grid in monotone_grid(),
        a in -2.0..2.0f64,
        start in finite_values(2..3),
    ) {
        let field =
            AffineField::new(AffineFieldSpec::constant_a(a, vec![0.1, -0.1]).unwrap()).unwrap();
        let state = LatentState::new(start, 0.0).unwrap();
        let traj = euler_sample(&field, &state, &grid, &Condition::None).unwrap();
        prop_assert!(traj.recompute_residual() < 1e-12);
        prop_assert_eq!(field.eval_count(), grid.n() as u64);
    }

    #[test]
    fn recon_identity_gap_is_rounding_only(
        seed in 0u64..1000,
        field_seed in 0u64..50,
        n in 2usize..12,
    ) {
        let d = 3;
        let field = SmoothRandomField::new(SmoothRandomFieldSpec {
            seed: field_seed,
            hidden_width: 12,
            gain: 1.0,
            dim: d,
            condition_dim: d,
        })
        .unwrap();
        let grid = TimeGrid::uniform(n).unwrap();
        let source_vals = PriorSampler::new(seed ^ 0xABCD).sample(d).unwrap();
        let source = LatentState::new(source_vals.values().to_vec(), 1.0).unwrap();
        let mut sampler = PriorSampler::new(seed);
        let (report, traj) = recon_invert(&field, &source, &mut sampler, &grid).unwrap();
        let noise = traj.initial().clone();
        let gap = error_identity_gap(&report, &traj, &source, &noise).unwrap();
        let bound = 1e-9 * l2(source.values(), &[0.0; 3]).unwrap().max(1.0);
        prop_assert!(gap <= bound, "gap {} over bound {}", gap, bound);
    }

    #[test]
    fn msd_velocity_interpolates_between_branches(
        model_v in finite_values(4..5),
        state in finite_values(4..5),
        source in finite_values(4..5),
        t in 0.0..0.95f64,
        eta in 0.0..=1.0f64,
        m in 0.0..=1.0f64,
    ) {
        let mask = Mask::new(vec![m; 4]).unwrap();
        let blended = msd_velocity(&model_v, &state, &source, t, &mask, eta).unwrap();
        let fg = msd_velocity(&model_v, &state, &source, t, &Mask::ones(4).unwrap(), eta).unwrap();
        let bg = msd_velocity(&model_v, &state, &source, t, &Mask::zeros(4).unwrap(), eta).unwrap();
        for j in 0..4 {
            let expect = m * fg[j] + (1.0 - m) * bg[j];
            let scale = expect.abs().max(1.0);
            prop_assert!((blended[j] - expect).abs() / scale < 1e-12);
        }
    }
}
