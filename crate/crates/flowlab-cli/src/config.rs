//! Configuration documents, flag overrides, and run metadata.
//!
//! One document format drives every subcommand: a TOML file with typed keys
//! and nested sections. Flags override document keys. A metadata JSON
//! written by a previous run can be passed as `--config` instead, which
//! replays that run's resolved configuration bit-exactly.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use flowlab::data::{make_blob_grid, make_box_mask};
use flowlab::fields::{AffineFieldSpec, FieldSpec, SmoothRandomFieldSpec};
use flowlab::io as fio;
use flowlab::{Condition, GridShape, LatentState, Mask, PriorSampler, TimeGrid, GENERATOR_ID};

use crate::commands::{config_error, CliError};

/// Flags shared by every run-producing subcommand.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// Configuration document (TOML), or the metadata JSON of a previous run.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,

    /// Override the step count of the uniform grid.
    #[arg(long, value_name = "N")]
    pub steps: Option<usize>,

    /// Override the run seed.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,

    /// Override the field with a named default: constant, affine,
    /// deterministic, or smooth.
    #[arg(long, value_name = "NAME")]
    pub field: Option<String>,

    /// Output directory (default: $FLOWLAB_OUT/<command> or
    /// ./flowlab_runs/<command>).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    #[command(flatten)]
    pub run: RunArgs,

    /// Inversion method: vanilla, ideal-affine, or recon.
    #[arg(long, value_name = "NAME")]
    pub method: Option<String>,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[command(flatten)]
    pub run: RunArgs,

    /// Editing pipeline: reinversion or recon-inv.
    #[arg(long, value_name = "NAME")]
    pub method: Option<String>,

    /// Override the transition timestep.
    #[arg(long, value_name = "R")]
    pub t_tau: Option<f64>,

    /// Override the masked blend coefficient.
    #[arg(long, value_name = "R")]
    pub eta: Option<f64>,

    /// Mask file (v1 state container or binary PGM).
    #[arg(long, value_name = "PATH")]
    pub mask: Option<PathBuf>,

    /// Use the model-free first stage.
    #[arg(long)]
    pub deterministic_stage1: bool,
}

/// The resolved configuration of one run. Serialized into the run metadata,
/// from which the run can be replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub steps: usize,
    pub seed: u64,
    /// Explicit grid nodes; defaults to the uniform grid on `steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    pub field: FieldSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<StartSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<ConditionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invert: Option<InvertSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edit: Option<EditSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<ImageSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ImageSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<MaskSpec>,
}

/// Start state for sampling and for the forward basis of inversions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSpec {
    /// Explicit values at time 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    /// Draw the start from the seeded prior instead.
    #[serde(default)]
    pub prior: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSpec {
    /// One of: none, source, reference.
    pub tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvertSection {
    /// One of: vanilla, ideal-affine, recon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditSection {
    #[serde(default = "default_t_tau")]
    pub t_tau: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub deterministic_stage1: bool,
    #[serde(default = "default_edit_method")]
    pub method: String,
}

impl Default for EditSection {
    fn default() -> Self {
        Self {
            t_tau: default_t_tau(),
            eta: default_eta(),
            deterministic_stage1: false,
            method: default_edit_method(),
        }
    }
}

fn default_t_tau() -> f64 {
    0.2
}

fn default_eta() -> f64 {
    1.0
}

fn default_edit_method() -> String {
    "reinversion".into()
}

/// Source or reference image of an edit run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ImageSpec {
    /// Gaussian bump on a zero background.
    Blob {
        rows: usize,
        cols: usize,
        center: (usize, usize),
        radius: f64,
        amplitude: f64,
    },
    /// Explicit values.
    Values { values: Vec<f64> },
    /// State file in the v1 container.
    File { path: PathBuf },
    /// Terminal state of an unconditioned forward pass from the seeded
    /// prior. Together with a condition-insensitive field this makes the
    /// reconstruction exact.
    Forward {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MaskSpec {
    Box {
        rows: usize,
        cols: usize,
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
    File {
        path: PathBuf,
    },
}

/// Metadata written next to every run's outputs; sufficient to replay the
/// run bit-exactly on the same platform.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool: String,
    pub version: String,
    pub generator: String,
    pub command: String,
    pub config: RunConfig,
}

impl RunMetadata {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            tool: "flowlab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            generator: GENERATOR_ID.into(),
            command: command.into(),
            config: config.clone(),
        }
    }
}

/// Loads a configuration document: TOML, or the metadata JSON of a previous
/// run (recognized by its leading '{').
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
    if text.trim_start().starts_with('{') {
        let meta: RunMetadata = serde_json::from_str(&text)
            .map_err(|e| config_error(format!("bad metadata JSON: {e}")))?;
        Ok(meta.config)
    } else {
        toml::from_str(&text).map_err(|e| config_error(format!("bad config: {e}")))
    }
}

/// Applies the shared flag overrides.
pub fn apply_run_flags(cfg: &mut RunConfig, args: &RunArgs) -> Result<(), CliError> {
    if let Some(steps) = args.steps {
        cfg.steps = steps;
        cfg.grid = None;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(name) = &args.field {
        let dim = field_dim(&cfg.field);
        cfg.field = default_field(name, dim, cfg.seed)?;
    }
    Ok(())
}

/// Applies the edit flag overrides.
pub fn apply_edit_flags(
    cfg: &mut RunConfig,
    args: &EditArgs,
    forced_method: Option<&str>,
) -> Result<(), CliError> {
    apply_run_flags(cfg, &args.run)?;
    let mut edit = cfg.edit.clone().unwrap_or_default();
    if let Some(t_tau) = args.t_tau {
        edit.t_tau = t_tau;
    }
    if let Some(eta) = args.eta {
        edit.eta = eta;
    }
    if args.deterministic_stage1 {
        edit.deterministic_stage1 = true;
    }
    if let Some(method) = &args.method {
        edit.method = method.clone();
    }
    if let Some(method) = forced_method {
        edit.method = method.to_string();
    }
    cfg.edit = Some(edit);
    if let Some(path) = &args.mask {
        cfg.mask = Some(MaskSpec::File { path: path.clone() });
    }
    Ok(())
}

/// State dimension declared by a field spec.
pub fn field_dim(spec: &FieldSpec) -> usize {
    match spec {
        FieldSpec::Constant { values, .. } => values.len(),
        FieldSpec::Deterministic { target, .. } => target.len(),
        FieldSpec::Affine(a) => a.b0.len(),
        FieldSpec::Smooth(s) => s.dim,
    }
}

/// Named default field used by the `--field` override.
fn default_field(name: &str, dim: usize, seed: u64) -> Result<FieldSpec, CliError> {
    match name {
        "constant" => Ok(FieldSpec::Constant {
            values: vec![1.0; dim],
            condition_dim: None,
        }),
        "affine" => {
            let spec = AffineFieldSpec::constant_a(1.0, vec![0.0; dim])
                .map_err(|e| config_error(format!("affine default: {e}")))?;
            Ok(FieldSpec::Affine(spec))
        }
        "deterministic" => Ok(FieldSpec::Deterministic {
            target: vec![0.0; dim],
            free: false,
        }),
        "smooth" => Ok(FieldSpec::Smooth(SmoothRandomFieldSpec {
            seed,
            hidden_width: 32,
            gain: 1.0,
            dim,
            condition_dim: dim,
        })),
        other => Err(config_error(format!("unknown field name {other:?}"))),
    }
}

/// Builds the run grid: explicit nodes when given, else uniform on `steps`.
pub fn resolve_grid(cfg: &RunConfig) -> Result<TimeGrid, CliError> {
    match &cfg.grid {
        Some(nodes) => {
            TimeGrid::from_times(nodes.clone()).map_err(|e| config_error(format!("grid: {e}")))
        }
        None => TimeGrid::uniform(cfg.steps).map_err(|e| config_error(format!("steps: {e}"))),
    }
}

/// Builds the start state for sample/invert runs.
pub fn resolve_start(cfg: &RunConfig, dim: usize) -> Result<LatentState, CliError> {
    let spec = cfg
        .start
        .as_ref()
        .ok_or_else(|| config_error("missing key [start] (values or prior)".to_string()))?;
    match (&spec.values, spec.prior) {
        (Some(values), false) => LatentState::new(values.clone(), 0.0)
            .map_err(|e| config_error(format!("start.values: {e}"))),
        (None, true) => PriorSampler::new(cfg.seed)
            .sample(dim)
            .map_err(|e| config_error(format!("start.prior: {e}"))),
        (Some(_), true) => Err(config_error(
            "start.values and start.prior are mutually exclusive".to_string(),
        )),
        (None, false) => Err(config_error(
            "missing key start.values (or set start.prior = true)".to_string(),
        )),
    }
}

/// Builds the conditioning for sample/invert runs.
pub fn resolve_condition(cfg: &RunConfig) -> Result<Condition, CliError> {
    let Some(spec) = &cfg.condition else {
        return Ok(Condition::None);
    };
    let payload = || {
        spec.values
            .clone()
            .ok_or_else(|| config_error("missing key condition.values".to_string()))
    };
    match spec.tag.as_str() {
        "none" => Ok(Condition::None),
        "source" => Ok(Condition::Source(payload()?)),
        "reference" => Ok(Condition::Reference(payload()?)),
        other => Err(config_error(format!("unknown condition tag {other:?}"))),
    }
}

/// Materializes a source or reference image. Returns the values and the grid
/// shape when one is known.
pub fn resolve_image(
    cfg: &RunConfig,
    spec: &ImageSpec,
    key: &str,
) -> Result<(Vec<f64>, Option<GridShape>), CliError> {
    match spec {
        ImageSpec::Blob {
            rows,
            cols,
            center,
            radius,
            amplitude,
        } => {
            let shape =
                GridShape::new(*rows, *cols).map_err(|e| config_error(format!("{key}: {e}")))?;
            let state = make_blob_grid(shape, *center, *radius, *amplitude)
                .map_err(|e| config_error(format!("{key}: {e}")))?;
            Ok((state.values().to_vec(), Some(shape)))
        }
        ImageSpec::Values { values } => Ok((values.clone(), None)),
        ImageSpec::File { path } => {
            let state = fio::read_state(path).map_err(|e| config_error(format!("{key}: {e}")))?;
            Ok((state.values().to_vec(), state.shape()))
        }
        ImageSpec::Forward {} => {
            let field = cfg
                .field
                .build()
                .map_err(|e| config_error(format!("field: {e}")))?;
            let grid = resolve_grid(cfg)?;
            let start = PriorSampler::new(cfg.seed)
                .sample(field.dim())
                .map_err(|e| config_error(format!("{key}: {e}")))?;
            let traj =
                flowlab::solver::euler_sample(field.as_ref(), &start, &grid, &Condition::None)
                    .map_err(|e| config_error(format!("{key}: {e}")))?;
            Ok((traj.terminal().values().to_vec(), None))
        }
    }
}

/// Materializes the mask section.
pub fn resolve_mask(spec: &MaskSpec) -> Result<Mask, CliError> {
    match spec {
        MaskSpec::Box {
            rows,
            cols,
            top,
            left,
            height,
            width,
        } => {
            let shape =
                GridShape::new(*rows, *cols).map_err(|e| config_error(format!("mask: {e}")))?;
            make_box_mask(shape, *top, *left, *height, *width)
                .map_err(|e| config_error(format!("mask: {e}")))
        }
        MaskSpec::File { path } => {
            fio::load_mask_auto(path).map_err(|e| config_error(format!("mask: {e}")))
        }
    }
}

/// Output directory: the flag, else $FLOWLAB_OUT/<command>, else
/// ./flowlab_runs/<command>.
pub fn resolve_out_dir(args_out: &Option<PathBuf>, command: &str) -> PathBuf {
    if let Some(dir) = args_out {
        return dir.clone();
    }
    let root = std::env::var_os("FLOWLAB_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("flowlab_runs"));
    root.join(command)
}
