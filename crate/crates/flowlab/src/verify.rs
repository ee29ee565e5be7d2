//! Built-in verification suites behind the `verify` subcommand.
//!
//! Each suite runs a fixed fixture set and reports one result per check.
//! Tolerances are pinned here, next to the checks that use them.

use std::fmt;
use std::str::FromStr;

use crate::data::{make_blob_grid, make_box_mask};
use crate::error::FlowError;
use crate::fields::{
    AffineField, AffineFieldSpec, DeterministicTargetField, SmoothRandomField,
    SmoothRandomFieldSpec, VelocityField,
};
use crate::grid::TimeGrid;
use crate::inversion::{
    error_identity_gap, ideal_invert_affine, recon_invert, recon_invert_from, vanilla_invert,
};
use crate::metrics::l2;
use crate::msd::msd_edit;
use crate::prior::PriorSampler;
use crate::reinversion::{recon_inv_edit, reinversion_edit, EditConfig};
use crate::solver::{closed_form_affine_solve, euler_sample, euler_sample_partial};
use crate::state::{Condition, GridShape, LatentState, Mask};

/// Relative bound for checks that are exact algebra up to rounding.
const EXACT_REL: f64 = 1e-9;
/// Relative bound for the agreement of the two editing pipelines on
/// exact-reconstruction fixtures.
const REFORMULATION_REL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Identity,
    Nfe,
    Msd,
    Reformulation,
    Drift,
    Convergence,
    All,
}

impl FromStr for Suite {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<Self, FlowError> {
        match s {
            "identity" => Ok(Suite::Identity),
            "nfe" => Ok(Suite::Nfe),
            "msd" => Ok(Suite::Msd),
            "reformulation" => Ok(Suite::Reformulation),
            "drift" => Ok(Suite::Drift),
            "convergence" => Ok(Suite::Convergence),
            "all" => Ok(Suite::All),
            other => Err(FlowError::Parse(format!("unknown suite {other:?}"))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Suite::Identity => "identity",
            Suite::Nfe => "nfe",
            Suite::Msd => "msd",
            Suite::Reformulation => "reformulation",
            Suite::Drift => "drift",
            Suite::Convergence => "convergence",
            Suite::All => "all",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub suite: Suite,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Runs a suite and returns one result per check.
pub fn run_suite(suite: Suite) -> Vec<CheckResult> {
    match suite {
        Suite::Identity => identity_suite(),
        Suite::Nfe => nfe_suite(),
        Suite::Msd => msd_suite(),
        Suite::Reformulation => reformulation_suite(),
        Suite::Drift => drift_suite(),
        Suite::Convergence => convergence_suite(),
        Suite::All => {
            let mut all = Vec::new();
            for s in [
                Suite::Identity,
                Suite::Nfe,
                Suite::Msd,
                Suite::Reformulation,
                Suite::Drift,
                Suite::Convergence,
            ] {
                all.extend(run_suite(s));
            }
            all
        }
    }
}

fn check(suite: Suite, name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        suite,
        name: name.to_string(),
        passed,
        detail,
    }
}

fn smooth_field(seed: u64, dim: usize, gain: f64) -> SmoothRandomField {
    SmoothRandomField::new(SmoothRandomFieldSpec {
        seed,
        hidden_width: 32,
        gain,
        dim,
        condition_dim: dim,
    })
    .unwrap()
}

/// Inversion error equals reconstruction error: 100 seeded runs over
/// d in {2, 256} and n in {4, 18}.
fn identity_suite() -> Vec<CheckResult> {
    let mut worst: f64 = 0.0;
    let mut runs = 0u32;
    for &d in &[2usize, 256] {
        for &n in &[4usize, 18] {
            let field = smooth_field(17, d, 1.0);
            let grid = TimeGrid::uniform(n).unwrap();
            for seed in 0..25u64 {
                let src_vals = PriorSampler::new(9000 + seed).sample(d).unwrap();
                let source = LatentState::new(src_vals.values().to_vec(), 1.0).unwrap();
                let mut sampler = PriorSampler::new(seed);
                let (report, traj) = recon_invert(&field, &source, &mut sampler, &grid).unwrap();
                let noise = traj.initial().clone();
                let gap = error_identity_gap(&report, &traj, &source, &noise).unwrap();
                let bound = EXACT_REL * l2(source.values(), &vec![0.0; d]).unwrap().max(1.0);
                worst = worst.max(gap / bound);
                runs += 1;
            }
        }
    }
    vec![check(
        Suite::Identity,
        "recon inversion error equals reconstruction error",
        worst <= 1.0,
        format!("{runs} runs, worst gap/bound = {worst:.3e}"),
    )]
}

/// Exact evaluation counts of the three pipelines at n = 18, t_tau = 0.2.
fn nfe_suite() -> Vec<CheckResult> {
    let grid = TimeGrid::uniform(18).unwrap();
    let source = PriorSampler::new(500).sample(4).unwrap().values().to_vec();
    let reference = PriorSampler::new(501).sample(4).unwrap().values().to_vec();
    let cfg = EditConfig {
        t_tau: 0.2,
        eta: 1.0,
        deterministic_stage1: false,
        seed: 5,
    };

    let field = smooth_field(23, 4, 0.8);
    let recon = recon_inv_edit(&field, &source, &reference, &grid, &cfg).unwrap();
    let field2 = smooth_field(23, 4, 0.8);
    let plain = reinversion_edit(&field2, &source, &reference, &grid, &cfg).unwrap();
    let field3 = smooth_field(23, 4, 0.8);
    let mut det_cfg = cfg;
    det_cfg.deterministic_stage1 = true;
    let det = reinversion_edit(&field3, &source, &reference, &grid, &det_cfg).unwrap();

    let mut results = vec![
        check(
            Suite::Nfe,
            "recon-inv pipeline consumes 36 model evaluations",
            recon.nfe == 36 && field.eval_count() == 36,
            format!("nfe = {}", recon.nfe),
        ),
        check(
            Suite::Nfe,
            "reinversion pipeline consumes 18 model evaluations",
            plain.nfe == 18 && field2.eval_count() == 18,
            format!("nfe = {}", plain.nfe),
        ),
        check(
            Suite::Nfe,
            "deterministic-stage-1 pipeline consumes 14 model evaluations",
            det.nfe == 14 && field3.eval_count() == 14,
            format!("nfe = {}", det.nfe),
        ),
    ];
    let speedup = recon.nfe as f64 / plain.nfe as f64;
    results.push(check(
        Suite::Nfe,
        "NFE speedup of reinversion over recon-inv is 2x",
        speedup == 2.0,
        format!("36/18 = {speedup}"),
    ));
    let partial_field = smooth_field(23, 4, 0.8);
    let start = PriorSampler::new(5)
        .sample(4)
        .unwrap()
        .at_time(grid.node(4))
        .unwrap();
    euler_sample_partial(&partial_field, &start, &grid, &Condition::None, 4, 18).unwrap();
    results.push(check(
        Suite::Nfe,
        "partial integration over [4, 18) makes 14 evaluations",
        partial_field.eval_count() == 14,
        format!("count = {}", partial_field.eval_count()),
    ));
    results
}

/// Deterministic landing plus masked background preservation.
fn msd_suite() -> Vec<CheckResult> {
    let mut results = Vec::new();

    // Euler integration of the source-seeking velocity lands on the target
    // from 50 random states, for several grid resolutions.
    let mut worst: f64 = 0.0;
    for &n in &[4usize, 18, 50] {
        let grid = TimeGrid::uniform(n).unwrap();
        let tau = crate::reinversion::transition_index(&grid, 0.2).unwrap();
        let d = 8;
        let source = PriorSampler::new(42).sample(d).unwrap().values().to_vec();
        let field = DeterministicTargetField::new(source.clone()).unwrap();
        for seed in 0..50u64 {
            let start_vals = PriorSampler::new(seed).sample(d).unwrap();
            let start = start_vals.at_time(grid.node(tau)).unwrap();
            let traj =
                euler_sample_partial(&field, &start, &grid, &Condition::None, tau, n).unwrap();
            let err = l2(traj.terminal().values(), &source).unwrap();
            let bound = EXACT_REL * l2(&source, &vec![0.0; d]).unwrap().max(1.0);
            worst = worst.max(err / bound);
        }
    }
    results.push(check(
        Suite::Msd,
        "source-seeking velocity lands exactly on the source",
        worst <= 1.0,
        format!("worst error/bound = {worst:.3e}"),
    ));

    // Background preservation with a binary box mask at eta = 1.
    let shape = GridShape::new(16, 16).unwrap();
    let source = make_blob_grid(shape, (8, 8), 3.0, 2.0).unwrap();
    let reference = make_blob_grid(shape, (4, 4), 2.0, -1.5).unwrap();
    let mask = make_box_mask(shape, 5, 5, 6, 6).unwrap();
    let field = smooth_field(13, 256, 1.0);
    let grid = TimeGrid::uniform(18).unwrap();
    let cfg = EditConfig {
        t_tau: 0.2,
        eta: 1.0,
        deterministic_stage1: false,
        seed: 3,
    };
    let out = msd_edit(
        &field,
        source.values(),
        reference.values(),
        &grid,
        &cfg,
        &mask,
    )
    .unwrap();
    let mut background_ok = true;
    let mut worst_bg = 0.0f64;
    let mut max_fg = 0.0f64;
    for j in 0..256 {
        let dev = (out.edited.values()[j] - source.values()[j]).abs();
        if mask.values()[j] == 0.0 {
            worst_bg = worst_bg.max(dev / source.values()[j].abs().max(1.0));
            if dev > EXACT_REL * source.values()[j].abs().max(1.0) {
                background_ok = false;
            }
        } else {
            max_fg = max_fg.max(dev);
        }
    }
    results.push(check(
        Suite::Msd,
        "unmasked coordinates equal the source at eta = 1",
        background_ok,
        format!("worst relative background deviation = {worst_bg:.3e}"),
    ));
    results.push(check(
        Suite::Msd,
        "at least one masked coordinate is edited",
        max_fg > 1e-3,
        format!("max masked deviation = {max_fg:.3e}"),
    ));

    // Collapse cases are bitwise.
    let plain = reinversion_edit(&field, source.values(), reference.values(), &grid, &cfg).unwrap();
    let all_ones = msd_edit(
        &field,
        source.values(),
        reference.values(),
        &grid,
        &cfg,
        &Mask::ones(256).unwrap(),
    )
    .unwrap();
    results.push(check(
        Suite::Msd,
        "all-ones mask reproduces the unmasked edit bit for bit",
        all_ones.edited.values() == plain.edited.values(),
        "compared elementwise".into(),
    ));
    let mut cfg0 = cfg;
    cfg0.eta = 0.0;
    let plain0 =
        reinversion_edit(&field, source.values(), reference.values(), &grid, &cfg0).unwrap();
    let eta0 = msd_edit(
        &field,
        source.values(),
        reference.values(),
        &grid,
        &cfg0,
        &mask,
    )
    .unwrap();
    results.push(check(
        Suite::Msd,
        "eta = 0 reproduces the unmasked edit bit for bit",
        eta0.edited.values() == plain0.edited.values(),
        "compared elementwise".into(),
    ));

    // Background deviation is non-increasing in eta.
    let mask2 = make_box_mask(shape, 6, 6, 5, 5).unwrap();
    let reference2 = make_blob_grid(shape, (11, 11), 2.0, 1.0).unwrap();
    let mut deviations = Vec::new();
    for eta in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let mut c = cfg;
        c.eta = eta;
        let out = msd_edit(
            &field,
            source.values(),
            reference2.values(),
            &grid,
            &c,
            &mask2,
        )
        .unwrap();
        let dev: f64 = (0..256)
            .filter(|&j| mask2.values()[j] == 0.0)
            .map(|j| (out.edited.values()[j] - source.values()[j]).powi(2))
            .sum::<f64>()
            .sqrt();
        deviations.push(dev);
    }
    let monotone = deviations.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    results.push(check(
        Suite::Msd,
        "background deviation is non-increasing in eta",
        monotone,
        format!("deviations over eta sweep: {deviations:.3?}"),
    ));

    results
}

/// Agreement of the two pipelines on exact-reconstruction fixtures, and the
/// transition-time direction on the nonlinear fixture.
fn reformulation_suite() -> Vec<CheckResult> {
    let mut results = Vec::new();

    let grid = TimeGrid::uniform(18).unwrap();
    let mut worst: f64 = 0.0;
    for (seed, a) in [(2u64, 0.6), (3, -0.4), (4, 1.1)] {
        let spec = AffineFieldSpec::constant_a(a, vec![0.05, -0.1, 0.2]).unwrap();
        let field = AffineField::new(spec).unwrap();
        let cfg = EditConfig {
            t_tau: 0.2,
            eta: 1.0,
            deterministic_stage1: false,
            seed,
        };
        let noise = PriorSampler::new(seed).sample(3).unwrap();
        let forward = euler_sample(&field, &noise, &grid, &Condition::None).unwrap();
        let source = forward.terminal().values().to_vec();
        let reference = PriorSampler::new(seed + 50)
            .sample(3)
            .unwrap()
            .values()
            .to_vec();
        let a_out = recon_inv_edit(&field, &source, &reference, &grid, &cfg).unwrap();
        let b_out = reinversion_edit(&field, &source, &reference, &grid, &cfg).unwrap();
        let scale = l2(b_out.edited.values(), &[0.0; 3]).unwrap().max(1.0);
        let gap = l2(a_out.edited.values(), b_out.edited.values()).unwrap() / scale;
        worst = worst.max(gap / REFORMULATION_REL);
    }
    results.push(check(
        Suite::Reformulation,
        "recon-inv and reinversion agree on exact-reconstruction fixtures",
        worst <= 1.0,
        format!("worst relative gap/bound = {worst:.3e}"),
    ));

    // Earlier switches drift further from the source.
    let mut ok = true;
    let mut detail = String::new();
    for seed in [11u64, 12, 13] {
        let field = smooth_field(seed, 8, 1.0);
        let source = PriorSampler::new(seed + 100)
            .sample(8)
            .unwrap()
            .values()
            .to_vec();
        let reference = PriorSampler::new(seed + 200)
            .sample(8)
            .unwrap()
            .values()
            .to_vec();
        let dist = |t_tau: f64| {
            let cfg = EditConfig {
                t_tau,
                eta: 1.0,
                deterministic_stage1: true,
                seed,
            };
            let out = reinversion_edit(&field, &source, &reference, &grid, &cfg).unwrap();
            l2(out.edited.values(), &source).unwrap()
        };
        let early = dist(0.05);
        let late = dist(0.5);
        if early < late {
            ok = false;
        }
        detail.push_str(&format!(
            "seed {seed}: d(0.05)={early:.3}, d(0.5)={late:.3}; "
        ));
    }
    results.push(check(
        Suite::Reformulation,
        "edit distance to source is larger for an earlier switch",
        ok,
        detail,
    ));

    results
}

/// Hand-checkable drift values and the vanilla-vs-recon error ordering.
fn drift_suite() -> Vec<CheckResult> {
    let mut results = Vec::new();

    let spec = AffineFieldSpec::constant_a(1.0, vec![0.0]).unwrap();
    let field = AffineField::new(spec.clone()).unwrap();
    let grid = TimeGrid::uniform(2).unwrap();
    let source = LatentState::new(vec![2.25], 1.0).unwrap();
    let true_noise = LatentState::new(vec![1.0], 0.0).unwrap();

    let vanilla = vanilla_invert(&field, &source, &grid, &Condition::None).unwrap();
    results.push(check(
        Suite::Drift,
        "vanilla inversion of the two-step fixture returns 0.5625",
        vanilla.estimated_noise.values() == [0.5625],
        format!("estimate = {:?}", vanilla.estimated_noise.values()),
    ));

    let (recon, _) = recon_invert_from(&field, &source, &true_noise, &grid).unwrap();
    let recon_err = (recon.estimated_noise.values()[0] - 1.0).abs();
    results.push(check(
        Suite::Drift,
        "recon inversion recovers the true noise within 1e-12",
        recon_err <= 1e-12,
        format!("error = {recon_err:.3e}"),
    ));

    let ideal = ideal_invert_affine(&spec, &source, &grid, &Condition::None).unwrap();
    results.push(check(
        Suite::Drift,
        "ideal affine inversion recovers the true noise exactly",
        ideal.estimated_noise.values() == [1.0],
        format!("estimate = {:?}", ideal.estimated_noise.values()),
    ));

    // On curved fixtures (x-dependent velocity, reconstruction exact by
    // matched noise) the vanilla error dominates the recon error.
    let mut min_ratio = f64::INFINITY;
    for (seed, a, d) in [
        (1u64, 0.5, 1usize),
        (2, 1.0, 1),
        (3, 1.5, 3),
        (4, -0.7, 3),
        (5, 2.0, 2),
        (6, 0.8, 4),
    ] {
        let b0 = PriorSampler::new(seed + 900)
            .sample(d)
            .unwrap()
            .values()
            .to_vec();
        let field = AffineField::new(AffineFieldSpec::constant_a(a, b0).unwrap()).unwrap();
        let grid = TimeGrid::uniform(6).unwrap();
        let noise = PriorSampler::new(seed).sample(d).unwrap();
        let forward = euler_sample(&field, &noise, &grid, &Condition::None).unwrap();
        let source = forward.terminal().clone();
        let cond = Condition::Source(source.values().to_vec());
        let vanilla = vanilla_invert(&field, &source, &grid, &cond).unwrap();
        let (recon, _) = recon_invert_from(&field, &source, &noise, &grid).unwrap();
        let vanilla_err = l2(vanilla.estimated_noise.values(), noise.values()).unwrap();
        let recon_err = l2(recon.estimated_noise.values(), noise.values()).unwrap();
        min_ratio = min_ratio.min(vanilla_err / recon_err.max(1e-300));
    }
    results.push(check(
        Suite::Drift,
        "vanilla error is at least 10x the recon error on curved fixtures",
        min_ratio >= 10.0,
        format!("min ratio = {min_ratio:.3e}"),
    ));

    results
}

/// First-order convergence of the forward Euler solver against the exact
/// affine flow.
fn convergence_suite() -> Vec<CheckResult> {
    let spec = AffineFieldSpec::constant_a(1.0, vec![0.0]).unwrap();
    let field = AffineField::new(spec.clone()).unwrap();
    let start = LatentState::new(vec![1.0], 0.0).unwrap();
    let exact = closed_form_affine_solve(&spec, &start, &Condition::None, 0.0, 1.0).unwrap();
    let mut errors = Vec::new();
    for n in [8usize, 16, 32, 64] {
        let grid = TimeGrid::uniform(n).unwrap();
        let traj = euler_sample(&field, &start, &grid, &Condition::None).unwrap();
        errors.push((traj.terminal().values()[0] - exact.values()[0]).abs());
    }
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let ok = ratios.iter().all(|r| (1.7..=2.3).contains(r));
    vec![check(
        Suite::Convergence,
        "terminal Euler error halves as the step count doubles",
        ok,
        format!("ratios = {ratios:.3?}"),
    )]
}
