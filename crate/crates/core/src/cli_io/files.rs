//! On-disk formats: iterate logs as CSV with a JSON sidecar, oracle grids
//! as CSV, reports as JSON, plot data as whitespace-separated columns.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::actor_critic::{AcConfig, IterateLog, IterateRow, RunMeta};
use crate::analysis::ConstantSet;
use crate::error::{Error, Result};
use crate::oracle::GridPoint;

use super::config::ExperimentConfig;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn parse_err(path: &Path, detail: impl std::fmt::Display) -> Error {
    Error::Parse { path: path.display().to_string(), detail: detail.to_string() }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| parse_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    super::config::read_json_file(path)
}

/// Sidecar written next to each run's CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub meta: RunMeta,
    pub seed_index: usize,
    /// File name of the CSV log, relative to this summary.
    pub log_file: String,
    pub ac: AcConfig,
    pub config: ExperimentConfig,
    pub constants: Option<ConstantSet>,
    /// Tail averages at `t = T`, when the window holds enough points.
    pub final_grad_sq_tail: Option<f64>,
    pub final_delta_sq_tail: Option<f64>,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    parse_err(path, e)
}

/// Writes one row per logged step: the scalar diagnostics followed by the
/// `omega_i` and `theta_i` coordinates.
pub fn write_log_csv(path: &Path, rows: &[IterateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let (nw, nt) = rows.first().map_or((0, 0), |r| (r.omega.len(), r.theta.len()));
    let mut header: Vec<String> =
        ["t", "grad_sq", "delta_sq", "value", "omega_norm", "theta_norm"].iter().map(|s| s.to_string()).collect();
    header.extend((0..nw).map(|i| format!("omega_{i}")));
    header.extend((0..nt).map(|i| format!("theta_{i}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        if r.omega.len() != nw || r.theta.len() != nt {
            return Err(Error::DimensionMismatch {
                context: "log row width",
                expected: nw + nt,
                actual: r.omega.len() + r.theta.len(),
            });
        }
        let mut rec = vec![
            r.t.to_string(),
            r.grad_sq.to_string(),
            r.delta_sq.to_string(),
            r.value.to_string(),
            r.omega_norm.to_string(),
            r.theta_norm.to_string(),
        ];
        rec.extend(r.omega.iter().chain(&r.theta).map(f64::to_string));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_log_csv(path: &Path) -> Result<Vec<IterateRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let nw = header.iter().filter(|h| h.starts_with("omega_") && *h != "omega_norm").count();
    let nt = header.iter().filter(|h| h.starts_with("theta_") && *h != "theta_norm").count();
    if header.len() != 6 + nw + nt {
        return Err(parse_err(path, "unexpected log columns"));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| parse_err(path, format!("row {line}: missing column {i}")))?
                .parse::<f64>()
                .map_err(|e| parse_err(path, format!("row {line}, column {i}: {e}")))
        };
        let t =
            rec.get(0).unwrap_or_default().parse::<usize>().map_err(|e| parse_err(path, format!("row {line}: bad t: {e}")))?;
        rows.push(IterateRow {
            t,
            grad_sq: num(1)?,
            delta_sq: num(2)?,
            value: num(3)?,
            omega_norm: num(4)?,
            theta_norm: num(5)?,
            omega: (6..6 + nw).map(num).collect::<Result<_>>()?,
            theta: (6 + nw..6 + nw + nt).map(num).collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}

/// Paths of the CSV log and JSON summary for seed index `i`.
pub fn run_paths(dir: &Path, i: usize) -> (PathBuf, PathBuf) {
    (dir.join(format!("run_seed{i}.csv")), dir.join(format!("run_seed{i}.json")))
}

pub fn write_run(dir: &Path, summary: &RunSummary, log: &IterateLog) -> Result<(PathBuf, PathBuf)> {
    let (csv_path, json_path) = run_paths(dir, summary.seed_index);
    write_log_csv(&csv_path, &log.rows)?;
    write_json(&json_path, summary)?;
    Ok((csv_path, json_path))
}

/// Loads a run from either its CSV log or its JSON summary.
pub fn read_run(path: &Path) -> Result<(RunSummary, IterateLog)> {
    let json_path = if path.extension().is_some_and(|e| e == "csv") { path.with_extension("json") } else { path.to_path_buf() };
    let summary: RunSummary = read_json(&json_path)?;
    let csv_path = json_path.parent().unwrap_or(Path::new("")).join(&summary.log_file);
    let rows = read_log_csv(&csv_path)?;
    let log = IterateLog { meta: summary.meta.clone(), rows };
    Ok((summary, log))
}

/// One row of the oracle grid file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub index: usize,
    pub margin: f64,
    pub delta: f64,
    pub omega_norm: f64,
    pub value: f64,
    pub grad_norm: f64,
    pub slem: f64,
    pub t_mix: Option<usize>,
    pub theta: Vec<f64>,
}

impl From<&GridPoint> for OracleRow {
    fn from(p: &GridPoint) -> Self {
        Self {
            index: p.index,
            margin: p.margin,
            delta: p.delta,
            omega_norm: p.omega_theta.norm(),
            value: p.value,
            grad_norm: p.gradient.norm(),
            slem: p.slem,
            t_mix: p.t_mix,
            theta: p.theta.as_slice().to_vec(),
        }
    }
}

const ORACLE_COLUMNS: [&str; 8] = ["index", "margin", "delta", "omega_norm", "value", "grad_norm", "slem", "t_mix"];

pub fn write_oracle_csv(path: &Path, rows: &[OracleRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let nt = rows.first().map_or(0, |r| r.theta.len());
    let mut header: Vec<String> = ORACLE_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..nt).map(|i| format!("theta_{i}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        let mut rec = vec![
            r.index.to_string(),
            r.margin.to_string(),
            r.delta.to_string(),
            r.omega_norm.to_string(),
            r.value.to_string(),
            r.grad_norm.to_string(),
            r.slem.to_string(),
            r.t_mix.map(|t| t.to_string()).unwrap_or_default(),
        ];
        rec.extend(r.theta.iter().map(f64::to_string));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_oracle_csv(path: &Path) -> Result<Vec<OracleRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let nt = r.headers().map_err(|e| csv_err(path, e))?.len().saturating_sub(ORACLE_COLUMNS.len());
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let num = |i: usize| field(i).parse::<f64>().map_err(|e| parse_err(path, e));
        let int = |i: usize| field(i).parse::<usize>().map_err(|e| parse_err(path, e));
        out.push(OracleRow {
            index: int(0)?,
            margin: num(1)?,
            delta: num(2)?,
            omega_norm: num(3)?,
            value: num(4)?,
            grad_norm: num(5)?,
            slem: num(6)?,
            t_mix: if field(7).is_empty() { None } else { Some(int(7)?) },
            theta: (8..8 + nt).map(num).collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

/// Two-column `t value` data, one pair per line.
pub fn write_dat(path: &Path, points: &[(usize, f64)]) -> Result<()> {
    let text: String = points.iter().map(|(t, v)| format!("{t} {v}\n")).collect();
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_dat(path: &Path) -> Result<Vec<(usize, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut it = l.split_whitespace();
            let t = it.next().and_then(|s| s.parse().ok());
            let v = it.next().and_then(|s| s.parse().ok());
            t.zip(v).ok_or_else(|| parse_err(path, format!("bad line {l:?}")))
        })
        .collect()
}

/// Rows `(t, grad_sq tail, delta_sq tail, predicted bound)`; missing values
/// are left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisCsvRow {
    pub t: usize,
    pub grad_sq_tail: Option<f64>,
    pub delta_sq_tail: Option<f64>,
    pub predicted_bound: Option<f64>,
}

pub fn write_analysis_csv(path: &Path, rows: &[AnalysisCsvRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_analysis_csv(path: &Path) -> Result<Vec<AnalysisCsvRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}
