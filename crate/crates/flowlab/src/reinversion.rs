//! Two-stage exemplar-guided editing.
//!
//! The forward-only pipeline samples a noise state, integrates it
//! source-conditioned up to a transition index, then reference-conditioned to
//! the end. The first stage can be swapped for the model-free target field,
//! removing its model cost. A reconstruction-based baseline pipeline is also
//! provided for cost and agreement comparisons.

use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::fields::{DeterministicTargetField, VelocityField};
use crate::grid::TimeGrid;
use crate::inversion::recon_invert_cached;
use crate::prior::PriorSampler;
use crate::solver::{euler_sample, euler_sample_partial, Trajectory};
use crate::state::{Condition, LatentState};

/// Everything an edit run needs beyond the field and the pair of images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditConfig {
    /// Transition timestep in (0, 1); snapped to a grid index per run.
    pub t_tau: f64,
    /// Blend coefficient in [0, 1] for masked selective denoising.
    pub eta: f64,
    /// Replace the source-conditioned first stage by the model-free target
    /// field, making its steps free of model cost.
    pub deterministic_stage1: bool,
    /// Seed of the prior sample the edit starts from.
    pub seed: u64,
}

impl EditConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.t_tau.is_finite() || self.t_tau <= 0.0 || self.t_tau >= 1.0 {
            return Err(FlowError::InvalidArgument(
                "t_tau must lie strictly inside (0, 1)",
            ));
        }
        if !self.eta.is_finite() || !(0.0..=1.0).contains(&self.eta) {
            return Err(FlowError::InvalidArgument("eta must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditMethod {
    Reinversion,
    ReconInv,
    Msd,
}

/// Result of an editing pipeline.
#[derive(Debug, Clone)]
pub struct EditOutcome {
    pub method: EditMethod,
    /// Edited state at time 1.
    pub edited: LatentState,
    /// Full trajectory across both stages. The recorded condition describes
    /// the second stage; the first stage is source-conditioned.
    pub trajectory: Trajectory,
    /// Model-field evaluations consumed, measured on the field counter.
    pub nfe: u64,
    /// Grid index at which conditioning switches from source to reference.
    pub stage_boundary: usize,
}

/// Smallest grid index i with t_i >= t_tau.
///
/// The result must split the grid into two non-empty stages; a boundary at
/// 0 or n is rejected so that one-stage runs have to be requested
/// explicitly rather than arising from a collapsed split.
pub fn transition_index(grid: &TimeGrid, t_tau: f64) -> Result<usize> {
    if !t_tau.is_finite() || t_tau <= 0.0 || t_tau >= 1.0 {
        return Err(FlowError::InvalidArgument(
            "t_tau must lie strictly inside (0, 1)",
        ));
    }
    let n = grid.n();
    let tau = grid.times().iter().position(|&t| t >= t_tau).unwrap_or(n);
    if tau == 0 || tau >= n {
        return Err(FlowError::DegenerateSplit { tau, n });
    }
    Ok(tau)
}

/// Forward-only two-stage edit.
///
/// Samples the prior with the config seed, integrates [0, tau) conditioned
/// on the source (with the model field, or with the free target field when
/// `deterministic_stage1` is set), then integrates [tau, n) conditioned on
/// the reference. NFE counts model-field evaluations only: n, or n - tau
/// with the deterministic first stage.
pub fn reinversion_edit(
    field: &dyn VelocityField,
    source: &[f64],
    reference: &[f64],
    grid: &TimeGrid,
    config: &EditConfig,
) -> Result<EditOutcome> {
    config.validate()?;
    let tau = transition_index(grid, config.t_tau)?;
    let before = field.eval_count();

    let noise = PriorSampler::new(config.seed).sample(field.dim())?;
    let stage1 = run_stage1(field, source, grid, config, &noise, tau)?;
    let transition = stage1.terminal().clone();
    let stage2 = euler_sample_partial(
        field,
        &transition,
        grid,
        &Condition::Reference(reference.to_vec()),
        tau,
        grid.n(),
    )?;

    let trajectory = Trajectory::stitch(stage1, stage2)?;
    Ok(EditOutcome {
        method: EditMethod::Reinversion,
        edited: trajectory.terminal().clone(),
        trajectory,
        nfe: counted_nfe(field, before),
        stage_boundary: tau,
    })
}

/// First stage shared by the forward-only pipelines: source-conditioned
/// model integration, or the free target field when configured.
pub(crate) fn run_stage1(
    field: &dyn VelocityField,
    source: &[f64],
    grid: &TimeGrid,
    config: &EditConfig,
    noise: &LatentState,
    tau: usize,
) -> Result<Trajectory> {
    let condition = Condition::Source(source.to_vec());
    if config.deterministic_stage1 {
        if source.len() != field.dim() {
            return Err(FlowError::DimensionMismatch {
                expected: field.dim(),
                got: source.len(),
            });
        }
        let target = DeterministicTargetField::free(source.to_vec())?;
        euler_sample_partial(&target, noise, grid, &condition, 0, tau)
    } else {
        euler_sample_partial(field, noise, grid, &condition, 0, tau)
    }
}

/// Reconstruction-based editing baseline.
///
/// Reconstructs the source from the seeded noise (n model evaluations,
/// velocities cached), inverts the source through the cached velocities, and
/// re-denoises: a source-conditioned leg over [0, tau) from the estimated
/// noise, then a reference-conditioned leg over [tau, n) starting from the
/// transition state obtained by inversion from the source. At the boundary
/// the trajectory is re-anchored to that inversion state (the two legs
/// coincide when reconstruction is exact), so the full pipeline costs
/// exactly 2n model evaluations.
pub fn recon_inv_edit(
    field: &dyn VelocityField,
    source: &[f64],
    reference: &[f64],
    grid: &TimeGrid,
    config: &EditConfig,
) -> Result<EditOutcome> {
    config.validate()?;
    let tau = transition_index(grid, config.t_tau)?;
    if source.len() != field.dim() {
        return Err(FlowError::DimensionMismatch {
            expected: field.dim(),
            got: source.len(),
        });
    }
    let before = field.eval_count();

    let noise = PriorSampler::new(config.seed).sample(field.dim())?;
    let recon = euler_sample(field, &noise, grid, &Condition::Source(source.to_vec()))?;
    let source_state = LatentState::new(source.to_vec(), 1.0)?;
    let inversion = recon_invert_cached(&source_state, &recon)?;

    // Source-conditioned re-denoise of [0, tau) from the estimated noise.
    // Its endpoint is superseded by the inversion transition state below.
    let _ = euler_sample_partial(
        field,
        &inversion.estimated_noise,
        grid,
        &Condition::Source(source.to_vec()),
        0,
        tau,
    )?;

    let transition = inversion.intermediate_states[tau].clone();
    let stage2 = euler_sample_partial(
        field,
        &transition,
        grid,
        &Condition::Reference(reference.to_vec()),
        tau,
        grid.n(),
    )?;

    // The inversion states below the boundary replay the cached velocities,
    // so they form a valid first trajectory leg ending at the transition.
    let stage1 = Trajectory::from_parts(
        inversion.intermediate_states[..=tau].to_vec(),
        recon.velocities()[..tau].to_vec(),
        grid.clone(),
        Condition::Source(source.to_vec()),
        0,
    );
    let trajectory = Trajectory::stitch(stage1, stage2)?;
    Ok(EditOutcome {
        method: EditMethod::ReconInv,
        edited: trajectory.terminal().clone(),
        trajectory,
        nfe: counted_nfe(field, before),
        stage_boundary: tau,
    })
}

/// Model evaluations consumed since `before`, zero for fields flagged as
/// free of model cost.
pub(crate) fn counted_nfe(field: &dyn VelocityField, before: u64) -> u64 {
    if field.nfe_free() {
        0
    } else {
        field.eval_count() - before
    }
}

/// NFE ratio a / b of two outcomes on the same grid.
pub fn nfe_speedup(a: &EditOutcome, b: &EditOutcome) -> Result<f64> {
    if a.trajectory.grid() != b.trajectory.grid() {
        return Err(FlowError::GridMismatch);
    }
    if b.nfe == 0 {
        return Err(FlowError::ZeroNfe);
    }
    Ok(a.nfe as f64 / b.nfe as f64)
}
