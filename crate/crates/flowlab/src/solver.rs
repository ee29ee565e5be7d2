//! Forward Euler integration of conditioned flows, with cached velocities,
//! plus high-accuracy and closed-form reference solvers.
//!
//! Integration never evaluates the field at t = 1: the last update uses the
//! state and time at t_{n-1}.

use std::sync::OnceLock;

use crate::error::{FlowError, Result};
use crate::fields::{AffineFieldSpec, VelocityField};
use crate::grid::TimeGrid;
use crate::state::{Condition, LatentState};

/// Ordered states at grid nodes and the velocity used for each step.
///
/// `states[k]` sits at node `start_index + k`; `velocities[k]` is the
/// velocity applied between nodes `start_index + k` and `start_index + k + 1`,
/// so `states[k + 1] = states[k] + delta * velocities[k]` is recomputable.
#[derive(Debug, Clone)]
pub struct Trajectory {
    states: Vec<LatentState>,
    velocities: Vec<Vec<f64>>,
    grid: TimeGrid,
    condition: Condition,
    start_index: usize,
}

impl Trajectory {
    pub(crate) fn from_parts(
        states: Vec<LatentState>,
        velocities: Vec<Vec<f64>>,
        grid: TimeGrid,
        condition: Condition,
        start_index: usize,
    ) -> Self {
        debug_assert_eq!(states.len(), velocities.len() + 1);
        Self {
            states,
            velocities,
            grid,
            condition,
            start_index,
        }
    }

    pub fn states(&self) -> &[LatentState] {
        &self.states
    }

    pub fn velocities(&self) -> &[Vec<f64>] {
        &self.velocities
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn condition(&self) -> &Condition {
        &self.condition
    }

    /// Grid index of the first state.
    pub fn start_index(&self) -> usize {
        self.start_index
    }

    /// Grid index of the last state.
    pub fn end_index(&self) -> usize {
        self.start_index + self.velocities.len()
    }

    pub fn initial(&self) -> &LatentState {
        &self.states[0]
    }

    pub fn terminal(&self) -> &LatentState {
        self.states.last().unwrap()
    }

    /// True when the trajectory covers every node of its grid.
    pub fn is_full(&self) -> bool {
        self.start_index == 0 && self.end_index() == self.grid.n()
    }

    /// Largest absolute deviation when replaying the cached velocities
    /// through the Euler update. Zero for an untampered trajectory up to
    /// rounding.
    pub fn recompute_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for (k, v) in self.velocities.iter().enumerate() {
            let dt = self.grid.delta(self.start_index + k);
            for (j, (cur, next)) in self.states[k]
                .values()
                .iter()
                .zip(self.states[k + 1].values())
                .enumerate()
            {
                worst = worst.max((cur + dt * v[j] - next).abs());
            }
        }
        worst
    }

    /// Concatenates two trajectories meeting at a shared node. The recorded
    /// condition describes the second leg.
    pub(crate) fn stitch(first: Trajectory, second: Trajectory) -> Result<Trajectory> {
        if first.grid != second.grid {
            return Err(FlowError::GridMismatch);
        }
        if first.end_index() != second.start_index {
            return Err(FlowError::IndexOrder {
                from: first.end_index(),
                to: second.start_index,
            });
        }
        let mut states = first.states;
        states.extend(second.states.into_iter().skip(1));
        let mut velocities = first.velocities;
        velocities.extend(second.velocities);
        Ok(Trajectory {
            states,
            velocities,
            grid: second.grid,
            condition: second.condition,
            start_index: first.start_index,
        })
    }
}

/// Integrates the full grid: from t_0 with `start` to t_n.
pub fn euler_sample(
    field: &dyn VelocityField,
    start: &LatentState,
    grid: &TimeGrid,
    condition: &Condition,
) -> Result<Trajectory> {
    euler_sample_partial(field, start, grid, condition, 0, grid.n())
}

/// Integrates the node range [from_index, to_index], making exactly
/// `to_index - from_index` field evaluations.
pub fn euler_sample_partial(
    field: &dyn VelocityField,
    start: &LatentState,
    grid: &TimeGrid,
    condition: &Condition,
    from_index: usize,
    to_index: usize,
) -> Result<Trajectory> {
    if from_index >= to_index || to_index > grid.n() {
        return Err(FlowError::IndexOrder {
            from: from_index,
            to: to_index,
        });
    }
    if start.dim() != field.dim() {
        return Err(FlowError::DimensionMismatch {
            expected: field.dim(),
            got: start.dim(),
        });
    }
    start.expect_time(grid.node(from_index))?;

    let steps = to_index - from_index;
    let mut states = Vec::with_capacity(steps + 1);
    let mut velocities = Vec::with_capacity(steps);
    // Snap the stored initial state onto the exact node time.
    states.push(rebuild(
        start.values().to_vec(),
        grid.node(from_index),
        start,
    )?);

    let mut x = start.values().to_vec();
    for i in from_index..to_index {
        let t = grid.node(i);
        let v = field.evaluate(&x, t, condition)?;
        if !v.iter().all(|vi| vi.is_finite()) {
            return Err(FlowError::Diverged { step: i });
        }
        let dt = grid.delta(i);
        for (xj, vj) in x.iter_mut().zip(&v) {
            *xj += dt * vj;
        }
        if !x.iter().all(|xi| xi.is_finite()) {
            return Err(FlowError::Diverged { step: i });
        }
        velocities.push(v);
        states.push(rebuild(x.clone(), grid.node(i + 1), start)?);
    }

    Ok(Trajectory::from_parts(
        states,
        velocities,
        grid.clone(),
        condition.clone(),
        from_index,
    ))
}

fn rebuild(values: Vec<f64>, time: f64, like: &LatentState) -> Result<LatentState> {
    match like.shape() {
        Some(s) => LatentState::with_shape(values, time, s),
        None => LatentState::new(values, time),
    }
}

/// High-accuracy reference terminal state, for verification only.
///
/// Affine fields are solved in closed form; everything else is integrated
/// with `refinement * 1024` uniform Euler steps from the start time to 1.
pub fn oracle_solve(
    field: &dyn VelocityField,
    start: &LatentState,
    condition: &Condition,
    refinement: usize,
) -> Result<LatentState> {
    if refinement == 0 {
        return Err(FlowError::InvalidArgument("refinement must be at least 1"));
    }
    if start.dim() != field.dim() {
        return Err(FlowError::DimensionMismatch {
            expected: field.dim(),
            got: start.dim(),
        });
    }
    if let Some(spec) = field.as_affine() {
        return closed_form_affine_solve(spec, start, condition, start.time(), 1.0);
    }
    let steps = refinement * 1024;
    let t0 = start.time();
    let h = (1.0 - t0) / steps as f64;
    let mut x = start.values().to_vec();
    for k in 0..steps {
        let t = t0 + k as f64 * h;
        let v = field.evaluate(&x, t, condition)?;
        if !v.iter().all(|vi| vi.is_finite()) {
            return Err(FlowError::Diverged { step: k });
        }
        for (xj, vj) in x.iter_mut().zip(&v) {
            *xj += h * vj;
        }
    }
    rebuild(x, 1.0, start)
}

/// Exact flow of dx/dt = a(t)·x + B·c + b0 over [t_from, t_to].
///
/// The integrating factor uses the exact piecewise-quadratic antiderivative
/// of a. On segments where a is constant the particular integral is closed
/// form; on genuinely linear segments it is evaluated with 64-point
/// Gauss-Legendre quadrature, which is exact to machine precision for these
/// analytic integrands.
pub fn closed_form_affine_solve(
    spec: &AffineFieldSpec,
    start: &LatentState,
    condition: &Condition,
    t_from: f64,
    t_to: f64,
) -> Result<LatentState> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&t_from) || !(0.0..=1.0).contains(&t_to) || t_to < t_from {
        return Err(FlowError::InvalidArgument("need 0 <= t_from <= t_to <= 1"));
    }
    if start.dim() != spec.dim() {
        return Err(FlowError::DimensionMismatch {
            expected: spec.dim(),
            got: start.dim(),
        });
    }
    start.expect_time(t_from)?;
    let offset = spec.offset(condition)?;

    let mut x = start.values().to_vec();
    if t_to > t_from {
        let nodes = spec.a_grid.times();
        // March across the a-interpolation segments overlapping [t_from, t_to].
        for seg in 0..spec.a_grid.n() {
            let lo = nodes[seg].max(t_from);
            let hi = nodes[seg + 1].min(t_to);
            if hi <= lo {
                continue;
            }
            let (phi, particular) = segment_flow(spec, lo, hi);
            for (xj, kj) in x.iter_mut().zip(&offset) {
                *xj = phi * *xj + particular * kj;
            }
        }
    }
    rebuild(x, t_to, start)
}

/// Homogeneous factor exp(int a) and particular factor
/// int_lo^hi exp(int_s^hi a) ds for one segment on which a is linear.
fn segment_flow(spec: &AffineFieldSpec, lo: f64, hi: f64) -> (f64, f64) {
    let h = hi - lo;
    let a_lo = spec.a_at(lo);
    let a_hi = spec.a_at(hi);
    let phi = spec.a_integral(lo, hi).exp();
    let particular = if (a_hi - a_lo).abs() < 1e-13 {
        // Constant a on the segment.
        let a = 0.5 * (a_lo + a_hi);
        if a == 0.0 {
            h
        } else {
            (a * h).exp_m1() / a
        }
    } else {
        let (nodes, weights) = gauss_legendre_64();
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * h;
        nodes
            .iter()
            .zip(weights)
            .map(|(u, w)| half * w * spec.a_integral(mid + half * u, hi).exp())
            .sum()
    };
    (phi, particular)
}

/// 64-point Gauss-Legendre nodes and weights on [-1, 1], computed once by
/// Newton iteration on the Legendre recurrence.
fn gauss_legendre_64() -> (&'static [f64], &'static [f64]) {
    static TABLE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let (n, w) = TABLE.get_or_init(|| {
        const N: usize = 64;
        let mut nodes = vec![0.0; N];
        let mut weights = vec![0.0; N];
        for i in 0..N {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (N as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre(N, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let (_, dp) = legendre(N, x);
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        (nodes, weights)
    });
    (n, w)
}

/// Legendre polynomial P_n(x) and its derivative by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{AffineField, ConstantField, DeterministicTargetField};

    fn x_field() -> AffineField {
        AffineField::new(AffineFieldSpec::constant_a(1.0, vec![0.0]).unwrap()).unwrap()
    }

    fn state(values: Vec<f64>, t: f64) -> LatentState {
        LatentState::new(values, t).unwrap()
    }

    #[test]
    fn hand_euler_two_steps_of_x_field() {
        let f = x_field();
        let grid = TimeGrid::uniform(2).unwrap();
        let traj = euler_sample(&f, &state(vec![1.0], 0.0), &grid, &Condition::None).unwrap();
        let xs: Vec<f64> = traj.states().iter().map(|s| s.values()[0]).collect();
        assert_eq!(xs, vec![1.0, 1.5, 2.25]);
        assert_eq!(f.eval_count(), 2);
        assert_eq!(traj.terminal().time(), 1.0);
    }

    #[test]
    fn zero_field_keeps_the_state() {
        let f = ConstantField::new(vec![0.0, 0.0]).unwrap();
        let grid = TimeGrid::uniform(5).unwrap();
        let traj = euler_sample(&f, &state(vec![3.0, -1.0], 0.0), &grid, &Condition::None).unwrap();
        for s in traj.states() {
            assert_eq!(s.values(), &[3.0, -1.0]);
        }
    }

    #[test]
    fn deterministic_field_lands_on_target_from_anywhere() {
        let target = vec![0.5, -2.0, 8.0];
        let f = DeterministicTargetField::new(target.clone()).unwrap();
        let grid = TimeGrid::uniform(18).unwrap();
        for start_values in [vec![0.0, 0.0, 0.0], vec![100.0, -50.0, 3.0]] {
            let traj =
                euler_sample(&f, &state(start_values, 0.0), &grid, &Condition::None).unwrap();
            for (got, want) in traj.terminal().values().iter().zip(&target) {
                assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn partial_range_counts_and_rejects() {
        let f = x_field();
        let grid = TimeGrid::uniform(18).unwrap();
        let start = state(vec![1.0], grid.node(4));
        let traj = euler_sample_partial(&f, &start, &grid, &Condition::None, 4, 18).unwrap();
        assert_eq!(f.eval_count(), 14);
        assert_eq!(traj.velocities().len(), 14);
        assert_eq!(traj.states().len(), 15);
        assert_eq!(traj.start_index(), 4);
        assert_eq!(traj.end_index(), 18);

        assert!(matches!(
            euler_sample_partial(&f, &start, &grid, &Condition::None, 4, 4),
            Err(FlowError::IndexOrder { .. })
        ));
        assert!(euler_sample_partial(&f, &start, &grid, &Condition::None, 5, 4).is_err());
        // Wrong start time for the requested node.
        assert!(matches!(
            euler_sample_partial(&f, &start, &grid, &Condition::None, 3, 18),
            Err(FlowError::TimeMismatch { .. })
        ));
    }

    #[test]
    fn full_partial_equals_euler_sample() {
        let f = x_field();
        let grid = TimeGrid::uniform(6).unwrap();
        let start = state(vec![1.25], 0.0);
        let a = euler_sample(&f, &start, &grid, &Condition::None).unwrap();
        let b = euler_sample_partial(&f, &start, &grid, &Condition::None, 0, 6).unwrap();
        for (sa, sb) in a.states().iter().zip(b.states()) {
            assert_eq!(sa.values(), sb.values());
        }
    }

    #[test]
    fn trajectory_recompute_residual_is_tiny() {
        let f = x_field();
        let grid = TimeGrid::uniform(18).unwrap();
        let traj = euler_sample(&f, &state(vec![1.0], 0.0), &grid, &Condition::None).unwrap();
        assert!(traj.recompute_residual() < 1e-12);
    }

    #[test]
    fn diverged_integration_names_the_step() {
        // Constant field with values so large the state overflows on the
        // first update.
        let f = ConstantField::new(vec![f64::MAX]).unwrap();
        let grid = TimeGrid::uniform(4).unwrap();
        let err = euler_sample(&f, &state(vec![f64::MAX], 0.0), &grid, &Condition::None);
        assert!(matches!(err, Err(FlowError::Diverged { step: 0 })));
    }

    #[test]
    fn concurrent_runs_match_sequential_bitwise() {
        let f = std::sync::Arc::new(
            AffineField::new(AffineFieldSpec::constant_a(1.0, vec![0.0, 0.0]).unwrap()).unwrap(),
        );
        let grid = TimeGrid::uniform(12).unwrap();
        let start = state(vec![1.0, -0.5], 0.0);
        let sequential = euler_sample(f.as_ref(), &start, &grid, &Condition::None).unwrap();
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let f = f.clone();
                let grid = grid.clone();
                let start = start.clone();
                std::thread::spawn(move || {
                    euler_sample(f.as_ref(), &start, &grid, &Condition::None).unwrap()
                })
            })
            .collect();
        for h in handles {
            let traj = h.join().unwrap();
            for (a, b) in traj.states().iter().zip(sequential.states()) {
                assert_eq!(a.values(), b.values());
            }
        }
        assert_eq!(f.eval_count(), 5 * 12);
    }

    #[test]
    fn oracle_refined_euler_converges_to_e() {
        let spec = SmoothLikeX;
        let start = state(vec![1.0], 0.0);
        let e = std::f64::consts::E;
        let err1 = (oracle_solve(&spec, &start, &Condition::None, 1)
            .unwrap()
            .values()[0]
            - e)
            .abs();
        let err2 = (oracle_solve(&spec, &start, &Condition::None, 2)
            .unwrap()
            .values()[0]
            - e)
            .abs();
        assert!(err1 < 2e-3, "err1={err1}");
        let ratio = err1 / err2;
        assert!((1.7..=2.3).contains(&ratio), "ratio={ratio}");
    }

    /// Non-affine wrapper around v(x, t) = x so the oracle takes the refined
    /// Euler path instead of the closed form.
    #[derive(Debug)]
    struct SmoothLikeX;

    impl VelocityField for SmoothLikeX {
        fn dim(&self) -> usize {
            1
        }
        fn condition_dim(&self) -> usize {
            1
        }
        fn evaluate(&self, x: &[f64], _t: f64, _c: &Condition) -> Result<Vec<f64>> {
            Ok(x.to_vec())
        }
        fn eval_count(&self) -> u64 {
            0
        }
    }

    #[test]
    fn oracle_zero_field_returns_start_exactly() {
        let f = ConstantField::new(vec![0.0]).unwrap();
        let start = state(vec![4.5], 0.0);
        let out = oracle_solve(&f, &start, &Condition::None, 1).unwrap();
        assert_eq!(out.values(), &[4.5]);
    }

    #[test]
    fn oracle_uses_closed_form_for_affine() {
        let f = x_field();
        let start = state(vec![1.0], 0.0);
        let out = oracle_solve(&f, &start, &Condition::None, 1).unwrap();
        assert!((out.values()[0] - std::f64::consts::E).abs() < 1e-12);
    }

    #[test]
    fn closed_form_pure_drift() {
        let spec = AffineFieldSpec::constant_a(0.0, vec![2.0, -1.0]).unwrap();
        let start = state(vec![1.0, 1.0], 0.25);
        let out = closed_form_affine_solve(&spec, &start, &Condition::None, 0.25, 0.75).unwrap();
        assert!((out.values()[0] - 2.0).abs() < 1e-15);
        assert!((out.values()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn closed_form_identity_range() {
        let spec = AffineFieldSpec::constant_a(1.0, vec![0.0]).unwrap();
        let start = state(vec![3.0], 0.4);
        let out = closed_form_affine_solve(&spec, &start, &Condition::None, 0.4, 0.4).unwrap();
        assert_eq!(out.values(), &[3.0]);
        assert_eq!(out.time(), 0.4);
    }

    #[test]
    fn closed_form_exponential() {
        let spec = AffineFieldSpec::constant_a(1.0, vec![0.0]).unwrap();
        let start = state(vec![1.0], 0.0);
        let out = closed_form_affine_solve(&spec, &start, &Condition::None, 0.0, 1.0).unwrap();
        assert!((out.values()[0] - std::f64::consts::E).abs() < 1e-14);
    }

    #[test]
    fn closed_form_linear_a_quadrature_path() {
        // dx/dt = t*x + 1 from x(0) = 1; reference value computed with
        // 30-digit quadrature of the integrating-factor solution.
        let spec = AffineFieldSpec {
            a_grid: TimeGrid::uniform(1).unwrap(),
            a_values: vec![0.0, 1.0],
            b0: vec![1.0],
            b: None,
            condition_dim: 1,
        };
        let start = state(vec![1.0], 0.0);
        let out = closed_form_affine_solve(&spec, &start, &Condition::None, 0.0, 1.0).unwrap();
        assert!(
            (out.values()[0] - 3.059_407_405_342_576).abs() < 1e-12,
            "got {}",
            out.values()[0]
        );
    }

    #[test]
    fn closed_form_linear_a_homogeneous() {
        // dx/dt = t*x from x(0) = 1 gives x(1) = e^{1/2}.
        let spec = AffineFieldSpec {
            a_grid: TimeGrid::uniform(1).unwrap(),
            a_values: vec![0.0, 1.0],
            b0: vec![0.0],
            b: None,
            condition_dim: 1,
        };
        let start = state(vec![1.0], 0.0);
        let out = closed_form_affine_solve(&spec, &start, &Condition::None, 0.0, 1.0).unwrap();
        assert!((out.values()[0] - (0.5f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn euler_error_halves_as_steps_double() {
        let f = x_field();
        let spec = f.spec().clone();
        let start = state(vec![1.0], 0.0);
        let exact = closed_form_affine_solve(&spec, &start, &Condition::None, 0.0, 1.0)
            .unwrap()
            .values()[0];
        let mut errors = Vec::new();
        for n in [8usize, 16, 32, 64] {
            let grid = TimeGrid::uniform(n).unwrap();
            let traj = euler_sample(&f, &start, &grid, &Condition::None).unwrap();
            errors.push((traj.terminal().values()[0] - exact).abs());
        }
        for pair in errors.windows(2) {
            let ratio = pair[0] / pair[1];
            assert!((1.7..=2.3).contains(&ratio), "ratio={ratio}");
        }
    }

    #[test]
    fn gauss_legendre_integrates_exp_exactly() {
        let (nodes, weights) = gauss_legendre_64();
        // int_{-1}^{1} e^x dx = e - 1/e
        let got: f64 = nodes.iter().zip(weights).map(|(x, w)| w * x.exp()).sum();
        let want = std::f64::consts::E - 1.0 / std::f64::consts::E;
        assert!((got - want).abs() < 1e-14);
        let total: f64 = weights.iter().sum();
        assert!((total - 2.0).abs() < 1e-13);
    }
}
