//! CSV and JSON files. Floats are written in shortest round-trip form so a
//! snapshot read back from disk is bitwise the field that was written.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use lagflow::problem::{GridField, SpaceTimeGrid};
use lagflow::verify::Annulus;

use crate::{CliError, KernelRow};

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, format!("line {}, column {}: {e}", e.line(), e.column())))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn finish(path: &Path, w: csv::Writer<BufWriter<File>>) -> Result<(), CliError> {
    let mut inner = w.into_inner().map_err(|e| io_err(path, e))?;
    inner.flush().map_err(|e| io_err(path, e))
}

/// One row per node per snapshot, header `x1,...,xn,t,u`.
pub fn write_snapshots(path: &Path, snaps: &[GridField]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    let n = snaps.first().map_or(0, |s| s.grid.n);
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.extend(["t".to_string(), "u".to_string()]);
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    let mut record = Vec::with_capacity(n + 2);
    for s in snaps {
        for (i, v) in s.values.iter().enumerate() {
            record.clear();
            record.extend(s.grid.point(i).iter().map(f64::to_string));
            record.push(s.t.to_string());
            record.push(v.to_string());
            w.write_record(&record).map_err(|e| io_err(path, e))?;
        }
    }
    finish(path, w)
}

/// Inverse of [`write_snapshots`]; rows must follow the grid's node order.
pub fn read_snapshots(path: &Path, grid: &SpaceTimeGrid) -> Result<Vec<GridField>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let n = grid.n;
    let expected: Vec<String> = (1..=n).map(|i| format!("x{i}")).chain(["t".into(), "u".into()]).collect();
    let header: Vec<String> = r.headers().map_err(|e| io_err(path, e))?.iter().map(str::to_string).collect();
    if header != expected {
        return Err(io_err(path, format!("header {header:?}, expected {expected:?}")));
    }
    let nodes = grid.node_count();
    let mut snaps = Vec::new();
    let mut values = Vec::with_capacity(nodes);
    let mut t_cur = f64::NAN;
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let parse = |k: usize| -> Result<f64, CliError> {
            rec[k].parse::<f64>().map_err(|e| io_err(path, format!("row {}, column {}: {e}", row + 2, k + 1)))
        };
        let idx = values.len();
        let x = grid.point(idx);
        for (k, xk) in x.iter().enumerate() {
            if (parse(k)? - xk).abs() > 1e-9 * grid.h {
                return Err(io_err(path, format!("row {} is not at node {idx} of the configured grid", row + 2)));
            }
        }
        let t = parse(n)?;
        if idx == 0 {
            t_cur = t;
        } else if t != t_cur {
            return Err(io_err(path, format!("row {}: time changes inside a snapshot", row + 2)));
        }
        values.push(parse(n + 1)?);
        if values.len() == nodes {
            snaps.push(GridField { grid: grid.clone(), t: t_cur, values: std::mem::replace(&mut values, Vec::with_capacity(nodes)) });
        }
    }
    if !values.is_empty() {
        return Err(io_err(path, "truncated final snapshot"));
    }
    Ok(snaps)
}

pub fn write_barrier_table(path: &Path, table: &[[f64; 5]]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(["s", "W", "w_edge", "w_blowup", "h"]).map_err(|e| io_err(path, e))?;
    for row in table {
        w.write_record(row.iter().map(f64::to_string)).map_err(|e| io_err(path, e))?;
    }
    finish(path, w)
}

/// Per-snapshot error summary: `t,max_abs_error,annulus_max_abs_error`.
pub fn write_diagnostics(path: &Path, errors: &[GridField], annulus: Annulus) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(["t", "max_abs_error", "annulus_max_abs_error"]).map_err(|e| io_err(path, e))?;
    for e in errors {
        let ann = e
            .values
            .iter()
            .enumerate()
            .filter(|(i, _)| annulus.contains(&e.grid.point(*i)))
            .map(|(_, v)| v.abs())
            .fold(0.0, f64::max);
        w.write_record([e.t.to_string(), e.max_abs().to_string(), ann.to_string()]).map_err(|e| io_err(path, e))?;
    }
    finish(path, w)
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

/// Vector-valued columns are `;`-separated.
pub fn write_kernel_rows(path: &Path, rows: &[KernelRow]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(["case", "n", "kappa", "alpha", "beta", "x", "y", "t", "sigma", "lhs", "rhs", "rel_err"])
        .map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record([
            r.case.to_string(),
            r.n.to_string(),
            join(&r.kappa),
            r.alpha.to_string(),
            r.beta.to_string(),
            join(&r.x),
            join(&r.y),
            r.t.to_string(),
            r.sigma.to_string(),
            r.lhs.to_string(),
            r.rhs.to_string(),
            r.rel_err.to_string(),
        ])
        .map_err(|e| io_err(path, e))?;
    }
    finish(path, w)
}
