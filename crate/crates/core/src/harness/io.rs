//! CSV traces with JSON sidecars.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::HarnessError;
use crate::engine::{Trace, TrialSummary};

pub const CSV_HEADER: [&str; 8] =
    ["k", "consensus_err", "grad_norm_sq", "mismatch", "err_to_opt", "m_running", "n_metric", "stderr_err_to_opt"];

/// Sidecar contents written next to every trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceMeta<'a> {
    pub label: &'a str,
    /// Full config snapshot.
    pub config: serde_json::Value,
    pub seed: u64,
    pub trials: usize,
    /// Per-trial stream keys `(seed, trial)`.
    pub trial_seeds: Vec<(u64, u32)>,
    pub clamp_count: u64,
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    pub summaries: &'a [TrialSummary],
}

fn fmt_value(v: f64) -> String {
    format!("{v:.11e}")
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `trace` as CSV to `path` and its metadata to `path` with a
/// `.json` extension. Returns the sidecar path.
pub fn write_trace(trace: &Trace, path: &Path, meta: &TraceMeta<'_>) -> Result<PathBuf, HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for (r, se) in trace.records.iter().zip(&trace.stderr) {
        w.write_record([
            r.k.to_string(),
            fmt_value(r.consensus_err),
            fmt_value(r.grad_norm_sq),
            fmt_value(r.mismatch),
            fmt_value(r.err_to_opt),
            fmt_value(r.m_running),
            fmt_value(r.n_metric),
            fmt_value(se.err_to_opt),
        ])?;
    }
    w.flush()?;
    let side = sidecar_path(path);
    let mut f = File::create(&side)?;
    serde_json::to_writer_pretty(&mut f, meta)?;
    f.write_all(b"\n")?;
    Ok(side)
}

/// A CSV trace read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub path: PathBuf,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TraceTable {
    pub fn column(&self, name: &str) -> Result<Vec<f64>, HarnessError> {
        let idx = self.header.iter().position(|h| h == name).ok_or_else(|| HarnessError::MissingColumn {
            path: self.path.clone(),
            column: name.to_string(),
        })?;
        Ok(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn read_trace(path: &Path) -> Result<TraceTable, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| HarnessError::Validation { field: path.display().to_string(), reason: e.to_string() })?;
        rows.push(row);
    }
    Ok(TraceTable { path: path.to_path_buf(), header, rows })
}
