//! Trajectory persistence.
//!
//! Layout of a run directory:
//!
//! ```text
//!   manifest.toml      config echo, meta, stats, content hash
//!   diag.csv           one record per output-cadence row
//!   fields/000000.field, 000001.field, ...   u,v snapshots per record
//! ```
//!
//! All numbers are written with 17 significant digits, which round-trips
//! IEEE doubles exactly; re-reading a directory reproduces the in-memory
//! trajectory bit for bit. Writers emit no timestamps, so identical runs
//! produce identical bytes.

use crate::config::RunConfig;
use crate::diagnostics::{DiagRecord, FieldSnapshot, RunMeta, RunStats, Trajectory, DIAG_COLUMNS};
use crate::error::{KsmError, Result};
use crate::geometry::{Field, Grid};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

const FIELD_FORMAT: &str = "ksm-field v1";
const RUN_FORMAT: &str = "ksm-run v1";

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

// ---------------------------------------------------------------------------
// field snapshot files

/// Serialize one field with its time stamp.
pub fn render_field_file(field: &Field, t: f64) -> String {
    let grid = field.grid();
    let cells = grid
        .cells()
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let extents = grid
        .extents()
        .iter()
        .map(|e| fmt_f64(*e))
        .collect::<Vec<_>>()
        .join(",");
    let mut out = format!(
        "{FIELD_FORMAT} dim={} cells={} extents={} t={}\n",
        grid.dim(),
        cells,
        extents,
        fmt_f64(t)
    );
    for v in field.values() {
        let _ = writeln!(out, "{}", fmt_f64(*v));
    }
    out
}

pub fn write_field_file(path: &Path, field: &Field, t: f64) -> Result<()> {
    fs::write(path, render_field_file(field, t))?;
    Ok(())
}

/// Parse a field snapshot file; returns the field and its time stamp.
pub fn parse_field_file(text: &str) -> Result<(Field, f64)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| KsmError::Io("empty field file".into()))?;
    if !header.starts_with(FIELD_FORMAT) {
        return Err(KsmError::Io(format!(
            "field file version mismatch: expected \"{FIELD_FORMAT}\", got \"{}\"",
            header.split(" dim=").next().unwrap_or(header)
        )));
    }
    let mut dim = None;
    let mut cells: Option<Vec<usize>> = None;
    let mut extents: Option<Vec<f64>> = None;
    let mut t = None;
    for token in header[FIELD_FORMAT.len()..].split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| KsmError::Io(format!("malformed header token \"{token}\"")))?;
        match key {
            "dim" => dim = Some(parse_num::<usize>(value, "dim")?),
            "cells" => {
                cells = Some(
                    value
                        .split(',')
                        .map(|v| parse_num::<usize>(v, "cells"))
                        .collect::<Result<_>>()?,
                )
            }
            "extents" => {
                extents = Some(
                    value
                        .split(',')
                        .map(|v| parse_num::<f64>(v, "extents"))
                        .collect::<Result<_>>()?,
                )
            }
            "t" => t = Some(parse_num::<f64>(value, "t")?),
            other => {
                return Err(KsmError::Io(format!(
                    "unknown field header key \"{other}\""
                )))
            }
        }
    }
    let dim = dim.ok_or_else(|| KsmError::Io("field header lacks dim".into()))?;
    let cells = cells.ok_or_else(|| KsmError::Io("field header lacks cells".into()))?;
    let extents = extents.ok_or_else(|| KsmError::Io("field header lacks extents".into()))?;
    let t = t.ok_or_else(|| KsmError::Io("field header lacks t".into()))?;
    let grid = Grid::new(dim, &extents, &cells)?;

    let mut values = Vec::with_capacity(grid.n_cells());
    for line in lines {
        if line.is_empty() {
            continue;
        }
        values.push(parse_num::<f64>(line, "field value")?);
    }
    if values.len() != grid.n_cells() {
        return Err(KsmError::Io(format!(
            "truncated field file: expected {} values, got {}",
            grid.n_cells(),
            values.len()
        )));
    }
    Ok((Field::new(grid, values)?, t))
}

pub fn read_field_file(path: &Path) -> Result<Field> {
    let text = fs::read_to_string(path)
        .map_err(|e| KsmError::Io(format!("{}: {e}", path.display())))?;
    Ok(parse_field_file(&text)?.0)
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse::<T>()
        .map_err(|_| KsmError::Io(format!("cannot parse {what} from \"{s}\"")))
}

// ---------------------------------------------------------------------------
// diag.csv

pub fn render_diag_csv(records: &[DiagRecord]) -> String {
    let mut out = DIAG_COLUMNS.join(",");
    out.push('\n');
    for r in records {
        let row = [
            r.t, r.mass, r.vinf, r.grad2, r.grad4, r.lap2, r.udev2, r.u_l2, r.hm1, r.y,
            r.f_energy, r.absorb,
        ]
        .map(fmt_f64)
        .join(",");
        out.push_str(&row);
        out.push('\n');
    }
    out
}

pub fn parse_diag_csv(text: &str) -> Result<Vec<DiagRecord>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| KsmError::Io("empty diag.csv".into()))?;
    let expected = DIAG_COLUMNS.join(",");
    if header != expected {
        return Err(KsmError::Io(format!(
            "diag.csv header mismatch: expected \"{expected}\", got \"{header}\""
        )));
    }
    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != DIAG_COLUMNS.len() {
            return Err(KsmError::Io(format!(
                "diag.csv row {} is truncated: {} of {} columns",
                lineno + 2,
                cols.len(),
                DIAG_COLUMNS.len()
            )));
        }
        let mut vals = [0.0f64; 12];
        for (slot, col) in vals.iter_mut().zip(&cols) {
            *slot = parse_num::<f64>(col, "diag.csv value")?;
        }
        records.push(DiagRecord {
            t: vals[0],
            mass: vals[1],
            vinf: vals[2],
            grad2: vals[3],
            grad4: vals[4],
            lap2: vals[5],
            udev2: vals[6],
            u_l2: vals[7],
            hm1: vals[8],
            y: vals[9],
            f_energy: vals[10],
            absorb: vals[11],
        });
    }
    for pair in records.windows(2) {
        if !(pair[1].t > pair[0].t) {
            return Err(KsmError::Io(format!(
                "diag.csv time column is not strictly increasing at t = {}",
                pair[1].t
            )));
        }
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// run directories

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    complete: bool,
    snapshot_count: usize,
    content_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    failure: Option<String>,
    #[serde(default)]
    warnings: Vec<String>,
    meta: RunMeta,
    stats: RunStats,
    config: RunConfig,
}

fn snapshot_name(index: usize) -> String {
    format!("{index:06}.field")
}

/// Persist a trajectory into a run directory (the `write_series`
/// operation). Existing files are overwritten.
pub fn write_series(traj: &Trajectory, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("fields"))?;
    let diag = render_diag_csv(&traj.records);
    fs::write(dir.join("diag.csv"), &diag)?;

    let mut hasher = Sha256::new();
    hasher.update(diag.as_bytes());
    for (i, snap) in traj.snapshots.iter().enumerate() {
        let text = render_field_file(&snap.u, snap.t);
        let text_v = render_field_file(&snap.v, snap.t);
        // u and v snapshots live side by side per record
        fs::write(dir.join("fields").join(format!("u_{}", snapshot_name(i))), &text)?;
        fs::write(dir.join("fields").join(format!("v_{}", snapshot_name(i))), &text_v)?;
        hasher.update(text.as_bytes());
        hasher.update(text_v.as_bytes());
    }
    let manifest = Manifest {
        format: RUN_FORMAT.into(),
        complete: traj.complete,
        snapshot_count: traj.snapshots.len(),
        content_hash: format!("sha256:{:x}", hasher.finalize()),
        failure: traj.failure.clone(),
        warnings: traj.warnings.clone(),
        meta: traj.meta.clone(),
        stats: traj.stats.clone(),
        config: traj.config.clone(),
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| KsmError::Io(format!("manifest serialization: {e}")))?;
    fs::write(dir.join("manifest.toml"), text)?;
    Ok(())
}

/// Load a run directory back into a trajectory (the `read_series`
/// operation). Validates the format version, the diag.csv schema, time
/// monotonicity and the presence of every referenced snapshot.
pub fn read_series(dir: &Path) -> Result<Trajectory> {
    let manifest_text = fs::read_to_string(dir.join("manifest.toml"))
        .map_err(|e| KsmError::Io(format!("{}: {e}", dir.join("manifest.toml").display())))?;
    let manifest: Manifest = toml::from_str(&manifest_text)
        .map_err(|e| KsmError::Io(format!("manifest: {}", e.message())))?;
    if manifest.format != RUN_FORMAT {
        return Err(KsmError::Io(format!(
            "run directory version mismatch: expected \"{RUN_FORMAT}\", got \"{}\"",
            manifest.format
        )));
    }
    let diag_text = fs::read_to_string(dir.join("diag.csv"))
        .map_err(|e| KsmError::Io(format!("{}: {e}", dir.join("diag.csv").display())))?;
    let records = parse_diag_csv(&diag_text)?;

    let mut snapshots = Vec::with_capacity(manifest.snapshot_count);
    for i in 0..manifest.snapshot_count {
        let u_path = dir.join("fields").join(format!("u_{}", snapshot_name(i)));
        let v_path = dir.join("fields").join(format!("v_{}", snapshot_name(i)));
        let u_text = fs::read_to_string(&u_path)
            .map_err(|e| KsmError::Io(format!("{}: {e}", u_path.display())))?;
        let v_text = fs::read_to_string(&v_path)
            .map_err(|e| KsmError::Io(format!("{}: {e}", v_path.display())))?;
        let (u, t) = parse_field_file(&u_text)?;
        let (v, tv) = parse_field_file(&v_text)?;
        if t != tv {
            return Err(KsmError::Io(format!(
                "snapshot {i}: u and v carry different times ({t} vs {tv})"
            )));
        }
        snapshots.push(FieldSnapshot { t, u, v });
    }
    Ok(Trajectory {
        config: manifest.config,
        meta: manifest.meta,
        stats: manifest.stats,
        records,
        snapshots,
        warnings: manifest.warnings,
        complete: manifest.complete,
        failure: manifest.failure,
    })
}
