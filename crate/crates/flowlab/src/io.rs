//! File formats: the v1 state container, P5 PGM previews, CSV exports, and
//! JSON summaries.
//!
//! The v1 container is a two-line ASCII header followed by raw
//! little-endian 64-bit values, so states round-trip bit-exactly:
//!
//! ```text
//! FLOWLAB v1
//! d=<int> rows=<int|0> cols=<int|0> time=<decimal>
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::inversion::{InversionMethod, InversionReport};
use crate::reinversion::{EditMethod, EditOutcome};
use crate::solver::Trajectory;
use crate::state::{GridShape, LatentState, Mask};

const MAGIC: &str = "FLOWLAB v1";

/// Writes a state in the v1 container.
pub fn write_state(path: &Path, state: &LatentState) -> Result<()> {
    write_v1(path, state.values(), state.shape(), state.time())
}

/// Writes a mask in the v1 container (time field 0).
pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    write_v1(path, mask.values(), mask.shape(), 0.0)
}

fn write_v1(path: &Path, values: &[f64], shape: Option<GridShape>, time: f64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let (rows, cols) = shape.map_or((0, 0), |s| (s.rows, s.cols));
    writeln!(w, "{MAGIC}")?;
    writeln!(
        w,
        "d={} rows={} cols={} time={}",
        values.len(),
        rows,
        cols,
        time
    )?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a state from the v1 container.
pub fn read_state(path: &Path) -> Result<LatentState> {
    let (values, shape, time) = read_v1(path)?;
    match shape {
        Some(s) => LatentState::with_shape(values, time, s),
        None => LatentState::new(values, time),
    }
}

/// Reads a mask from the v1 container, validating the [0, 1] range.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let (values, shape, _) = read_v1(path)?;
    match shape {
        Some(s) => Mask::with_shape(values, s),
        None => Mask::new(values),
    }
}

/// Loads a mask from either container: v1 state format, or binary P5 PGM
/// with pixels above 127 mapping to 1.
pub fn load_mask_auto(path: &Path) -> Result<Mask> {
    let mut head = [0u8; 2];
    File::open(path)?.read_exact(&mut head)?;
    if &head == b"P5" {
        let (shape, pixels) = read_pgm(path)?;
        let values = pixels
            .iter()
            .map(|&p| if p > 127 { 1.0 } else { 0.0 })
            .collect();
        Mask::with_shape(values, shape)
    } else {
        read_mask(path)
    }
}

fn read_v1(path: &Path) -> Result<(Vec<f64>, Option<GridShape>, f64)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(FlowError::Parse(format!(
            "bad magic line: {:?}",
            line.trim_end()
        )));
    }
    line.clear();
    r.read_line(&mut line)?;
    let mut d = None;
    let mut rows = None;
    let mut cols = None;
    let mut time = None;
    for part in line.split_whitespace() {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| FlowError::Parse(format!("bad header field: {part:?}")))?;
        match key {
            "d" => d = Some(parse_usize(key, value)?),
            "rows" => rows = Some(parse_usize(key, value)?),
            "cols" => cols = Some(parse_usize(key, value)?),
            "time" => {
                time = Some(
                    value
                        .parse::<f64>()
                        .map_err(|_| FlowError::Parse(format!("bad time value: {value:?}")))?,
                )
            }
            _ => return Err(FlowError::Parse(format!("unknown header key: {key:?}"))),
        }
    }
    let (d, rows, cols, time) = match (d, rows, cols, time) {
        (Some(d), Some(r), Some(c), Some(t)) => (d, r, c, t),
        _ => return Err(FlowError::Parse("incomplete v1 header".into())),
    };
    let mut bytes = vec![0u8; d * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| FlowError::Parse(format!("expected {d} values after header")))?;
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let shape = if rows == 0 && cols == 0 {
        None
    } else {
        Some(GridShape::new(rows, cols)?)
    };
    Ok((values, shape, time))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| FlowError::Parse(format!("bad {key} value: {value:?}")))
}

/// Writes an 8-bit binary PGM, mapping [min, max] linearly to [0, 255].
/// A constant grid maps to all zeros.
pub fn write_pgm(path: &Path, values: &[f64], shape: GridShape) -> Result<()> {
    if values.len() != shape.len() {
        return Err(FlowError::DimensionMismatch {
            expected: shape.len(),
            got: values.len(),
        });
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", shape.cols, shape.rows)?;
    let pixels: Vec<u8> = values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    w.write_all(&pixels)?;
    w.flush()?;
    Ok(())
}

/// Reads an 8-bit binary PGM.
pub fn read_pgm(path: &Path) -> Result<(GridShape, Vec<u8>)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let mut fields = Vec::new();
    // Header: magic, width, height, maxval, each separated by whitespace,
    // with '#' comments allowed through the end of the line.
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(FlowError::Parse("truncated PGM header".into()));
        }
        fields.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| FlowError::Parse("non-ASCII PGM header".into()))?
                .to_string(),
        );
    }
    pos += 1; // single whitespace after maxval
    if fields[0] != "P5" {
        return Err(FlowError::Parse(format!(
            "not a binary PGM: magic {:?}",
            fields[0]
        )));
    }
    let cols: usize = parse_usize("width", &fields[1])?;
    let rows: usize = parse_usize("height", &fields[2])?;
    if fields[3] != "255" {
        return Err(FlowError::Parse(format!(
            "unsupported maxval {:?}",
            fields[3]
        )));
    }
    let shape = GridShape::new(rows, cols)?;
    let pixels = bytes
        .get(pos..pos + shape.len())
        .ok_or_else(|| FlowError::Parse("truncated PGM pixel data".into()))?
        .to_vec();
    Ok((shape, pixels))
}

/// One row per node: index, t, then the d value columns.
pub fn write_trajectory_csv(path: &Path, trajectory: &Trajectory) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let d = trajectory.initial().dim();
    write_csv_header(&mut w, d, "x")?;
    for (k, s) in trajectory.states().iter().enumerate() {
        write_csv_row(&mut w, trajectory.start_index() + k, s.time(), s.values())?;
    }
    w.flush()?;
    Ok(())
}

/// One row per step: index, t, then the d cached velocity columns.
pub fn write_velocities_csv(path: &Path, trajectory: &Trajectory) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let d = trajectory.initial().dim();
    write_csv_header(&mut w, d, "v")?;
    for (k, v) in trajectory.velocities().iter().enumerate() {
        let i = trajectory.start_index() + k;
        write_csv_row(&mut w, i, trajectory.grid().node(i), v)?;
    }
    w.flush()?;
    Ok(())
}

/// Backward states of an inversion, one row per node.
pub fn write_report_csv(path: &Path, report: &InversionReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let d = report.estimated_noise.dim();
    write_csv_header(&mut w, d, "x")?;
    for (i, s) in report.intermediate_states.iter().enumerate() {
        write_csv_row(&mut w, i, s.time(), s.values())?;
    }
    w.flush()?;
    Ok(())
}

/// (t, value) pairs, e.g. a drift curve.
pub fn write_curve_csv(path: &Path, curve: &[(f64, f64)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,value")?;
    for (t, v) in curve {
        writeln!(w, "{t},{v}")?;
    }
    w.flush()?;
    Ok(())
}

fn write_csv_header(w: &mut impl Write, d: usize, prefix: &str) -> Result<()> {
    write!(w, "index,t")?;
    for j in 0..d {
        write!(w, ",{prefix}{j}")?;
    }
    writeln!(w)?;
    Ok(())
}

fn write_csv_row(w: &mut impl Write, index: usize, t: f64, values: &[f64]) -> Result<()> {
    write!(w, "{index},{t}")?;
    for v in values {
        write!(w, ",{v}")?;
    }
    writeln!(w)?;
    Ok(())
}

/// JSON summary of an inversion run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InversionSummary {
    pub method: InversionMethod,
    pub nfe: u64,
    pub estimated_noise: Vec<f64>,
    pub inversion_error: Option<f64>,
    pub reconstruction_error: Option<f64>,
    pub identity_gap: Option<f64>,
    pub time_clamped: bool,
}

/// JSON summary of an edit run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EditSummary {
    pub method: EditMethod,
    pub nfe: u64,
    pub tau: usize,
    pub t_tau: f64,
    pub eta: f64,
    pub seed: u64,
    pub deterministic_stage1: bool,
}

impl EditSummary {
    pub fn new(outcome: &EditOutcome, config: &crate::reinversion::EditConfig) -> Self {
        Self {
            method: outcome.method,
            nfe: outcome.nfe,
            tau: outcome.stage_boundary,
            t_tau: config.t_tau,
            eta: config.eta,
            seed: config.seed,
            deterministic_stage1: config.deterministic_stage1,
        }
    }
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| FlowError::Parse(format!("json encode: {e}")))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
