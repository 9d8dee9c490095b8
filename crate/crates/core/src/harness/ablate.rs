//! Inference-only sweeps over one extraction parameter.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::agent::Checkpoint;
use super::config::ExperimentConfig;
use crate::env::Env;
use crate::error::{Error, Result};
use crate::extraction::{evaluate_policy, ActionSelector, EvalStats, ExtractionConfig};
use crate::rng::mix_seed;

const BLOCK_SALT: u64 = 0x0b10_c000_0000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Candidate actions per decision.
    Candidates,
    /// LogSumExp temperature.
    TauR,
    /// Selection softmax temperature.
    TauQ,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Candidates => "candidates",
            SweepAxis::TauR => "tau_r",
            SweepAxis::TauQ => "tau_q",
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &ExtractionConfig, value: f64) -> Result<ExtractionConfig> {
        let mut c = base.clone();
        match self {
            SweepAxis::Candidates => {
                if !(value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64) {
                    return Err(Error::InputDomain(format!("candidate count {value} is not a positive integer")));
                }
                c.candidates = value as usize;
            }
            SweepAxis::TauR => c.tau_r = value,
            SweepAxis::TauQ => c.tau_q = value,
        }
        c.validate().map_err(|e| Error::InputDomain(e.to_string()))?;
        Ok(c)
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "candidates" | "n_pi" => Ok(SweepAxis::Candidates),
            "tau_r" => Ok(SweepAxis::TauR),
            "tau_q" => Ok(SweepAxis::TauQ),
            _ => Err(Error::Config(format!("unknown sweep axis {s:?} (candidates, tau_r, tau_q)"))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `blocks` evaluation blocks of `episodes` episodes. Block `b` uses the same
/// episode streams whatever the selector, so sweep points share noise.
pub fn evaluate_blocks(env: &Env, selector: &dyn ActionSelector, episodes: usize, blocks: usize, seed: u64) -> Result<Vec<EvalStats>> {
    (0..blocks)
        .map(|b| evaluate_policy(env, selector, episodes, mix_seed(seed, BLOCK_SALT + b as u64)))
        .collect()
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One sweep point, aggregated over evaluation blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    /// Mean over blocks of the per-block mean return.
    pub mean_return: f64,
    /// Standard deviation of the per-block mean returns.
    pub std_return: f64,
    pub success_rate: f64,
    pub success_std: f64,
    pub blocks: usize,
    pub episodes: usize,
    pub checkpoint_digest: String,
}

impl SweepRow {
    pub fn from_blocks(axis: SweepAxis, value: f64, stats: &[EvalStats], digest: &str) -> Self {
        let (mean_return, std_return) = mean_std(&stats.iter().map(|s| s.mean_return).collect::<Vec<_>>());
        let (success_rate, success_std) = mean_std(&stats.iter().map(|s| s.success_rate).collect::<Vec<_>>());
        SweepRow {
            axis,
            value,
            mean_return,
            std_return,
            success_rate,
            success_std,
            blocks: stats.len(),
            episodes: stats.first().map_or(0, |s| s.returns.len()),
            checkpoint_digest: digest.to_owned(),
        }
    }
}

/// Evaluate `checkpoint` once per value of `axis`, everything else taken
/// from `config`. The checkpoint is only read.
pub fn run_ablation(
    checkpoint: &Checkpoint,
    config: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InputDomain("ablation needs at least one value".into()));
    }
    let env = checkpoint.meta.config.env()?;
    let base = config.extraction();
    let digest = checkpoint.digest();
    values
        .iter()
        .map(|&v| {
            let extraction = axis.apply(&base, v)?;
            let selector = checkpoint.agent.selector(&extraction);
            let stats = evaluate_blocks(&env, &selector, config.eval_episodes, config.eval_seeds, config.seed)?;
            Ok(SweepRow::from_blocks(axis, v, &stats, &digest))
        })
        .collect()
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::format("sweep table", e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::format("sweep table", e.to_string()))
}

pub fn sweep_from_csv(bytes: &[u8]) -> Result<Vec<SweepRow>> {
    let rows = csv::Reader::from_reader(bytes)
        .deserialize()
        .collect::<std::result::Result<Vec<SweepRow>, _>>()
        .map_err(|e| Error::format("sweep table", e.to_string()))?;
    if rows.is_empty() {
        return Err(Error::format("sweep table", "no rows"));
    }
    if rows.iter().any(|r| r.axis != rows[0].axis) {
        return Err(Error::format("sweep table", "rows mix several axes"));
    }
    Ok(rows)
}
