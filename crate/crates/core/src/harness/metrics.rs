//! Training metrics CSV and the run summary.
//!
//! Column order is fixed:
//! `step,bc_loss,td_loss,eval_mean_return,eval_success_rate,eval_std,q_star_mae,wall_clock`.
//! Empty cells mean "not measured": losses before the first step,
//! `q_star_mae` outside finite environments or for the scalar baseline, and
//! `wall_clock` unless it was requested (it breaks byte-identical reruns).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluation point of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    /// Mean behaviour-cloning loss since the previous row.
    pub bc_loss: Option<f64>,
    /// Mean critic TD loss since the previous row.
    pub td_loss: Option<f64>,
    pub eval_mean_return: f64,
    pub eval_success_rate: f64,
    pub eval_std: f64,
    pub q_star_mae: Option<f64>,
    /// Seconds since training started.
    pub wall_clock: Option<f64>,
}

pub fn metrics_to_csv(rows: &[MetricsRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::format("metrics", e.to_string()))?;
    }
    if rows.is_empty() {
        w.write_record(HEADER).map_err(|e| Error::format("metrics", e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::format("metrics", e.to_string()))
}

const HEADER: [&str; 8] = [
    "step",
    "bc_loss",
    "td_loss",
    "eval_mean_return",
    "eval_success_rate",
    "eval_std",
    "q_star_mae",
    "wall_clock",
];

pub fn metrics_from_csv(bytes: &[u8]) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| Error::format("metrics", e.to_string()))?;
    if header.iter().ne(HEADER) {
        return Err(Error::format("metrics", format!("unexpected header {header:?}")));
    }
    r.deserialize()
        .collect::<std::result::Result<Vec<MetricsRow>, _>>()
        .map_err(|e| Error::format("metrics", e.to_string()))
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    std::fs::write(path, metrics_to_csv(rows)?).map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    metrics_from_csv(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Headline numbers of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: String,
    pub env: String,
    pub seed: u64,
    pub steps: usize,
    /// Training budget label; runs here use desk-scale step counts.
    pub budget: String,
    /// Mean over the final three evaluation rows (fewer if the run has fewer).
    pub headline_mean_return: f64,
    pub headline_success_rate: f64,
    pub eval_rows: usize,
    pub checkpoint_digest: String,
}

/// Mean return and success rate over the last three rows.
pub fn headline(rows: &[MetricsRow]) -> Option<(f64, f64)> {
    if rows.is_empty() {
        return None;
    }
    let tail = &rows[rows.len().saturating_sub(3)..];
    let n = tail.len() as f64;
    Some((
        tail.iter().map(|r| r.eval_mean_return).sum::<f64>() / n,
        tail.iter().map(|r| r.eval_success_rate).sum::<f64>() / n,
    ))
}
