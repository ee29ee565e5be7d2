//! Subcommand implementations and the exit-code mapping.
//!
//! Exit codes are stable API: 0 ok, 2 config, 3 divergence, 4 capability,
//! 5 degenerate split.

use std::path::Path;

use serde::Serialize;

use flowlab::io as fio;
use flowlab::metrics::{drift_curve, l2};
use flowlab::msd::msd_edit;
use flowlab::reinversion::{nfe_speedup, recon_inv_edit, reinversion_edit};
use flowlab::verify::{run_suite, Suite};
use flowlab::{inversion, solver, EditConfig, FlowError, GridShape, LatentState, PriorSampler};

use crate::config::{
    apply_edit_flags, apply_run_flags, load_config, resolve_condition, resolve_grid, resolve_image,
    resolve_mask, resolve_out_dir, resolve_start, EditArgs, EditSection, InvertArgs, RunArgs,
    RunConfig, RunMetadata,
};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DIVERGENCE: u8 = 3;
pub const EXIT_CAPABILITY: u8 = 4;
pub const EXIT_DEGENERATE_SPLIT: u8 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub fn config_error(message: String) -> CliError {
    CliError {
        code: EXIT_CONFIG,
        message,
    }
}

/// Maps a library error onto the stable exit codes.
fn run_error(e: FlowError) -> CliError {
    let code = match &e {
        FlowError::Diverged { .. } => EXIT_DIVERGENCE,
        FlowError::NotAffine => EXIT_CAPABILITY,
        FlowError::DegenerateSplit { .. } => EXIT_DEGENERATE_SPLIT,
        _ => EXIT_CONFIG,
    };
    CliError {
        code,
        message: e.to_string(),
    }
}

fn write_outputs(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| config_error(format!("cannot create {}: {e}", dir.display())))
}

fn save<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    fio::write_json(path, value).map_err(run_error)
}

#[derive(Serialize)]
struct SampleSummary {
    nfe: u64,
    steps: usize,
    seed: u64,
    terminal_time: f64,
}

pub fn cmd_sample(args: RunArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config)?;
    apply_run_flags(&mut cfg, &args)?;
    let out = resolve_out_dir(&args.out, "sample");
    write_outputs(&out)?;

    let field = cfg.field.build().map_err(run_error)?;
    let grid = resolve_grid(&cfg)?;
    let start = resolve_start(&cfg, field.dim())?;
    let condition = resolve_condition(&cfg)?;

    let trajectory =
        solver::euler_sample(field.as_ref(), &start, &grid, &condition).map_err(run_error)?;

    fio::write_trajectory_csv(&out.join("trajectory.csv"), &trajectory).map_err(run_error)?;
    fio::write_velocities_csv(&out.join("velocities.csv"), &trajectory).map_err(run_error)?;
    fio::write_state(&out.join("terminal.fls"), trajectory.terminal()).map_err(run_error)?;
    save(
        &out.join("summary.json"),
        &SampleSummary {
            nfe: field.eval_count(),
            steps: grid.n(),
            seed: cfg.seed,
            terminal_time: trajectory.terminal().time(),
        },
    )?;
    save(
        &out.join("metadata.json"),
        &RunMetadata::new("sample", &cfg),
    )?;
    println!("nfe={}", field.eval_count());
    Ok(())
}

pub fn cmd_invert(args: InvertArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.run.config)?;
    apply_run_flags(&mut cfg, &args.run)?;
    if let Some(method) = &args.method {
        let mut section = cfg
            .invert
            .clone()
            .unwrap_or(crate::config::InvertSection { method: None });
        section.method = Some(method.clone());
        cfg.invert = Some(section);
    }
    let method = cfg
        .invert
        .as_ref()
        .and_then(|s| s.method.clone())
        .ok_or_else(|| config_error("missing key invert.method".to_string()))?;
    let out = resolve_out_dir(&args.run.out, "invert");
    write_outputs(&out)?;

    let field = cfg.field.build().map_err(run_error)?;
    let grid = resolve_grid(&cfg)?;
    let start = resolve_start(&cfg, field.dim())?;
    let condition = resolve_condition(&cfg)?;

    // Forward basis: the source to invert and the reference for drift.
    let forward =
        solver::euler_sample(field.as_ref(), &start, &grid, &condition).map_err(run_error)?;
    let source = forward.terminal().clone();

    let (report, recon_pair) = match method.as_str() {
        "vanilla" => (
            inversion::vanilla_invert(field.as_ref(), &source, &grid, &condition)
                .map_err(run_error)?,
            None,
        ),
        "ideal-affine" => {
            let spec = field
                .as_affine()
                .ok_or_else(|| run_error(FlowError::NotAffine))?;
            (
                inversion::ideal_invert_affine(spec, &source, &grid, &condition)
                    .map_err(run_error)?,
                None,
            )
        }
        "recon" => {
            let mut sampler = PriorSampler::new(cfg.seed);
            let (report, traj) =
                inversion::recon_invert(field.as_ref(), &source, &mut sampler, &grid)
                    .map_err(run_error)?;
            (report, Some(traj))
        }
        other => return Err(config_error(format!("unknown inversion method {other:?}"))),
    };

    let inversion_error =
        l2(report.estimated_noise.values(), forward.initial().values()).map_err(run_error)?;
    let (reconstruction_error, identity_gap) = match &recon_pair {
        Some(traj) => {
            let recon_err = l2(source.values(), traj.terminal().values()).map_err(run_error)?;
            let gap = inversion::error_identity_gap(&report, traj, &source, forward.initial())
                .map_err(run_error)?;
            (Some(recon_err), Some(gap))
        }
        None => (None, None),
    };

    fio::write_trajectory_csv(&out.join("forward.csv"), &forward).map_err(run_error)?;
    fio::write_report_csv(&out.join("report.csv"), &report).map_err(run_error)?;
    let drift = drift_curve(&report, &forward).map_err(run_error)?;
    fio::write_curve_csv(&out.join("drift.csv"), &drift).map_err(run_error)?;
    fio::write_state(&out.join("estimated_noise.fls"), &report.estimated_noise)
        .map_err(run_error)?;
    save(
        &out.join("summary.json"),
        &fio::InversionSummary {
            method: report.method,
            nfe: report.nfe,
            estimated_noise: report.estimated_noise.values().to_vec(),
            inversion_error: Some(inversion_error),
            reconstruction_error,
            identity_gap,
            time_clamped: report.time_clamped,
        },
    )?;
    save(
        &out.join("metadata.json"),
        &RunMetadata::new("invert", &cfg),
    )?;
    println!("method={method} nfe={}", report.nfe);
    Ok(())
}

pub fn cmd_edit(args: EditArgs, forced_method: Option<&str>) -> Result<(), CliError> {
    let mut cfg = load_config(&args.run.config)?;
    apply_edit_flags(&mut cfg, &args, forced_method)?;
    let out = resolve_out_dir(&args.run.out, "edit");
    write_outputs(&out)?;

    let outcome = run_edit_pipeline(&cfg)?;
    let edit = cfg.edit.clone().unwrap_or_default();
    let edit_config = edit_config_of(&cfg, &edit);

    let (_, source_shape) = resolve_image(
        &cfg,
        cfg.source
            .as_ref()
            .ok_or_else(|| config_error("missing key [source]".into()))?,
        "source",
    )?;

    fio::write_state(&out.join("edited.fls"), &outcome.edited).map_err(run_error)?;
    if let Some(shape) = source_shape {
        write_preview(&out.join("preview.pgm"), &outcome.edited, shape)?;
    }
    fio::write_trajectory_csv(&out.join("trajectory.csv"), &outcome.trajectory)
        .map_err(run_error)?;
    save(
        &out.join("summary.json"),
        &fio::EditSummary::new(&outcome, &edit_config),
    )?;
    save(&out.join("metadata.json"), &RunMetadata::new("edit", &cfg))?;
    println!(
        "method={} nfe={} tau={}",
        edit.method, outcome.nfe, outcome.stage_boundary
    );
    Ok(())
}

fn edit_config_of(cfg: &RunConfig, edit: &EditSection) -> EditConfig {
    EditConfig {
        t_tau: edit.t_tau,
        eta: edit.eta,
        deterministic_stage1: edit.deterministic_stage1,
        seed: cfg.seed,
    }
}

fn run_edit_pipeline(cfg: &RunConfig) -> Result<flowlab::EditOutcome, CliError> {
    let edit = cfg.edit.clone().unwrap_or_default();
    let field = cfg.field.build().map_err(run_error)?;
    let grid = resolve_grid(cfg)?;
    let (source, _) = resolve_image(
        cfg,
        cfg.source
            .as_ref()
            .ok_or_else(|| config_error("missing key [source]".into()))?,
        "source",
    )?;
    let (reference, _) = resolve_image(
        cfg,
        cfg.reference
            .as_ref()
            .ok_or_else(|| config_error("missing key [reference]".into()))?,
        "reference",
    )?;
    let edit_config = edit_config_of(cfg, &edit);
    let mask = cfg.mask.as_ref().map(resolve_mask).transpose()?;

    match (edit.method.as_str(), mask) {
        ("reinversion", None) => {
            reinversion_edit(field.as_ref(), &source, &reference, &grid, &edit_config)
                .map_err(run_error)
        }
        ("reinversion", Some(mask)) => msd_edit(
            field.as_ref(),
            &source,
            &reference,
            &grid,
            &edit_config,
            &mask,
        )
        .map_err(run_error),
        ("recon-inv", None) => {
            recon_inv_edit(field.as_ref(), &source, &reference, &grid, &edit_config)
                .map_err(run_error)
        }
        ("recon-inv", Some(_)) => Err(config_error(
            "masked selective denoising applies to the reinversion method only".into(),
        )),
        (other, _) => Err(config_error(format!("unknown edit method {other:?}"))),
    }
}

fn write_preview(path: &Path, state: &LatentState, shape: GridShape) -> Result<(), CliError> {
    if shape.len() != state.dim() {
        return Ok(()); // dimension changed relative to the source image; skip
    }
    fio::write_pgm(path, state.values(), shape).map_err(run_error)
}

pub fn cmd_verify(suite: &str) -> Result<(), CliError> {
    let suite: Suite = suite
        .parse()
        .map_err(|e: FlowError| config_error(e.to_string()))?;
    let results = run_suite(suite);
    let mut failed = 0usize;
    for r in &results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        println!("{status} [{}] {}: {}", r.suite, r.name, r.detail);
        if !r.passed {
            failed += 1;
        }
    }
    println!("{} checks, {} failed", results.len(), failed);
    if failed > 0 {
        return Err(CliError {
            code: 1,
            message: format!("{failed} checks failed"),
        });
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchRow {
    method: String,
    nfe: u64,
}

#[derive(Serialize)]
struct BenchSummary {
    steps: usize,
    t_tau: f64,
    pipelines: Vec<BenchRow>,
    speedup_recon_inv_over_reinversion: f64,
    speedup_reinversion_over_deterministic: f64,
}

pub fn cmd_bench(args: EditArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.run.config)?;
    apply_edit_flags(&mut cfg, &args, None)?;
    let out = resolve_out_dir(&args.run.out, "bench");
    write_outputs(&out)?;

    let edit = cfg.edit.clone().unwrap_or_default();
    let grid = resolve_grid(&cfg)?;
    let (source, _) = resolve_image(
        &cfg,
        cfg.source
            .as_ref()
            .ok_or_else(|| config_error("missing key [source]".into()))?,
        "source",
    )?;
    let (reference, _) = resolve_image(
        &cfg,
        cfg.reference
            .as_ref()
            .ok_or_else(|| config_error("missing key [reference]".into()))?,
        "reference",
    )?;
    let base = edit_config_of(&cfg, &edit);

    // Fresh field per pipeline so each counter starts at zero.
    let field = cfg.field.build().map_err(run_error)?;
    let recon =
        recon_inv_edit(field.as_ref(), &source, &reference, &grid, &base).map_err(run_error)?;
    let field = cfg.field.build().map_err(run_error)?;
    let plain =
        reinversion_edit(field.as_ref(), &source, &reference, &grid, &base).map_err(run_error)?;
    let field = cfg.field.build().map_err(run_error)?;
    let mut det_config = base;
    det_config.deterministic_stage1 = true;
    let det = reinversion_edit(field.as_ref(), &source, &reference, &grid, &det_config)
        .map_err(run_error)?;

    let summary = BenchSummary {
        steps: grid.n(),
        t_tau: base.t_tau,
        pipelines: vec![
            BenchRow {
                method: "recon-inv".into(),
                nfe: recon.nfe,
            },
            BenchRow {
                method: "reinversion".into(),
                nfe: plain.nfe,
            },
            BenchRow {
                method: "reinversion-deterministic".into(),
                nfe: det.nfe,
            },
        ],
        speedup_recon_inv_over_reinversion: nfe_speedup(&recon, &plain).map_err(run_error)?,
        speedup_reinversion_over_deterministic: nfe_speedup(&plain, &det).map_err(run_error)?,
    };
    save(&out.join("bench.json"), &summary)?;
    save(&out.join("metadata.json"), &RunMetadata::new("bench", &cfg))?;
    for row in &summary.pipelines {
        println!("{:<28} nfe={}", row.method, row.nfe);
    }
    println!(
        "speedup recon-inv/reinversion = {}",
        summary.speedup_recon_inv_over_reinversion
    );
    println!(
        "speedup reinversion/deterministic = {:.4}",
        summary.speedup_reinversion_over_deterministic
    );
    Ok(())
}
