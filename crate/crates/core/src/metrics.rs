//! Per-iteration convergence and optimality measurements.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EdpInstance, LocalCost};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("metric window is empty")]
    EmptyWindow,
}

/// Averages of an `n x p` iterate matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Means {
    /// `u' X / n`
    pub weighted: Vec<f64>,
    /// `1' X / n`
    pub plain: Vec<f64>,
}

pub fn weighted_mean(x: &DMatrix<f64>, u: &DVector<f64>) -> Result<Means, MetricsError> {
    if x.nrows() != u.len() {
        return Err(MetricsError::ShapeMismatch(format!("{} rows vs weight length {}", x.nrows(), u.len())));
    }
    let n = x.nrows() as f64;
    let weighted = x.column_iter().map(|col| col.dot(u) / n).collect();
    let plain = x.column_iter().map(|col| col.sum() / n).collect();
    Ok(Means { weighted, plain })
}

fn deviation_norm(x: &DMatrix<f64>, center: &[f64]) -> f64 {
    let mut total = 0.0;
    for (c, col) in x.column_iter().enumerate() {
        total += col.iter().map(|v| (v - center[c]).powi(2)).sum::<f64>();
    }
    total.sqrt()
}

/// `|| X - 1 xbar' ||_F` with `xbar = u' X / n`.
pub fn consensus_error(x: &DMatrix<f64>, u: &DVector<f64>) -> Result<f64, MetricsError> {
    let means = weighted_mean(x, u)?;
    Ok(deviation_norm(x, &means.weighted))
}

/// Running average `M(k) = (1/k) sum_{t<=k} a g_t + b e_t^2` of the
/// optimality gap `g_t = |grad F(xbar_t)|^2` and consensus error `e_t`.
pub fn m_metric(grad_norm_sq: &[f64], consensus_err: &[f64], a: f64, b: f64) -> Result<Vec<f64>, MetricsError> {
    if grad_norm_sq.is_empty() {
        return Err(MetricsError::EmptyWindow);
    }
    if grad_norm_sq.len() != consensus_err.len() {
        return Err(MetricsError::ShapeMismatch("series lengths differ".into()));
    }
    let mut sum = 0.0;
    Ok(grad_norm_sq
        .iter()
        .zip(consensus_err)
        .enumerate()
        .map(|(t, (g, e))| {
            sum += a * g + b * e * e;
            sum / (t + 1) as f64
        })
        .collect())
}

/// KKT residual: spread of marginal costs among generator buses plus the
/// squared power mismatch. Buses with a degenerate box are left out of the
/// spread term since their output is fixed.
pub fn n_metric<C: LocalCost>(w: &DMatrix<f64>, instance: &EdpInstance<C>) -> f64 {
    let totals = instance.total_demand();
    let mut value = 0.0;
    for c in 0..w.ncols() {
        let grads: Vec<f64> = instance
            .agents()
            .iter()
            .enumerate()
            .filter(|(_, a)| a.is_generator())
            .map(|(i, a)| a.gradient(w[(i, c)]))
            .collect();
        if !grads.is_empty() {
            let mean = grads.iter().sum::<f64>() / grads.len() as f64;
            value += grads.iter().map(|g| (g - mean).powi(2)).sum::<f64>();
        }
        value += (w.column(c).sum() - totals[c]).powi(2);
    }
    value
}

/// Euclidean norm of the stacked difference `W - W*`.
pub fn error_to_opt(w: &DMatrix<f64>, w_star: &DMatrix<f64>) -> Result<f64, MetricsError> {
    if w.shape() != w_star.shape() {
        return Err(MetricsError::ShapeMismatch(format!("{:?} vs {:?}", w.shape(), w_star.shape())));
    }
    Ok((w - w_star).norm())
}

/// `|sum_i w_i - D|`, the coupling-constraint violation.
pub fn power_mismatch(w: &DMatrix<f64>, total_demand: &[f64]) -> f64 {
    w.column_iter()
        .zip(total_demand)
        .map(|(col, d)| (col.sum() - d).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// First record index `k` (1-based) where `series` drops below
/// `fraction * series[0]`.
pub fn iterations_to_threshold(series: &[f64], fraction: f64) -> Option<usize> {
    let first = *series.first()?;
    series.iter().position(|&e| e < fraction * first).map(|i| i + 1)
}

/// Mean of the trailing `fraction` of a series (at least one point).
pub fn tail_mean(series: &[f64], fraction: f64) -> f64 {
    let len = ((series.len() as f64 * fraction).ceil() as usize).clamp(1, series.len().max(1));
    let tail = &series[series.len() - len..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// One row of a trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub consensus_err: f64,
    /// Consensus error around the unweighted mean.
    pub consensus_err_plain: f64,
    pub grad_norm_sq: f64,
    pub mismatch: f64,
    pub err_to_opt: f64,
    pub m_running: f64,
    pub n_metric: f64,
    /// Squared gap between the network-average tracker and the
    /// network-average true dual gradient.
    pub tracking_sq: f64,
}

impl IterationRecord {
    pub const FIELDS: usize = 8;

    pub fn values(&self) -> [f64; Self::FIELDS] {
        [
            self.consensus_err,
            self.consensus_err_plain,
            self.grad_norm_sq,
            self.mismatch,
            self.err_to_opt,
            self.m_running,
            self.n_metric,
            self.tracking_sq,
        ]
    }

    pub fn from_values(k: usize, v: [f64; Self::FIELDS]) -> Self {
        Self {
            k,
            consensus_err: v[0],
            consensus_err_plain: v[1],
            grad_norm_sq: v[2],
            mismatch: v[3],
            err_to_opt: v[4],
            m_running: v[5],
            n_metric: v[6],
            tracking_sq: v[7],
        }
    }
}

/// Pointwise mean and standard error over equally long record series.
pub fn aggregate(trials: &[Vec<IterationRecord>]) -> (Vec<IterationRecord>, Vec<IterationRecord>) {
    let count = trials.len();
    let len = trials.iter().map(Vec::len).min().unwrap_or(0);
    let mut mean = Vec::with_capacity(len);
    let mut stderr = Vec::with_capacity(len);
    for t in 0..len {
        let k = trials[0][t].k;
        // shifted by the first trial so identical trials reduce exactly
        let origin = trials[0][t].values();
        let mut sum = [0.0; IterationRecord::FIELDS];
        let mut sum_sq = [0.0; IterationRecord::FIELDS];
        for trial in trials {
            for (j, v) in trial[t].values().into_iter().enumerate() {
                let d = v - origin[j];
                sum[j] += d;
                sum_sq[j] += d * d;
            }
        }
        let c = count as f64;
        let mut m = [0.0; IterationRecord::FIELDS];
        let mut se = [0.0; IterationRecord::FIELDS];
        for j in 0..IterationRecord::FIELDS {
            m[j] = origin[j] + sum[j] / c;
            if count > 1 {
                let var = ((sum_sq[j] - sum[j] * sum[j] / c) / (c - 1.0)).max(0.0);
                se[j] = (var / c).sqrt();
            }
        }
        mean.push(IterationRecord::from_values(k, m));
        stderr.push(IterationRecord::from_values(k, se));
    }
    (mean, stderr)
}
