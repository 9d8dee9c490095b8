//! Learned critic against exact oracle tables on finite environments.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::critic::{critic_cond, QStarEstimator, RewardToGoCritic};
use crate::env::{Env, OfflineDataset, RefPolicySpec};
use crate::error::{Error, Result};
use crate::flow::repeat_rows;
use crate::oracle::{env_rtg_distribution, finite_parts, exact_q_pi, q_star_from_distributions};
use crate::policy::BasePolicy;
use crate::rng::Rng;

/// One distinct `(step, state, action)` of a dataset with its oracle values.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetPair {
    pub step: usize,
    pub state: usize,
    pub action: usize,
    /// Occurrences in the dataset.
    pub count: usize,
    pub obs: Vec<f64>,
    pub act: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub next_obs: Vec<f64>,
    /// `eta ln E exp(Z / eta)` over the exact discounted return distribution.
    pub q_star: f64,
    pub q_pi: f64,
}

/// Distinct dataset pairs, ordered by `(step, state, action)`, with oracle
/// values at temperature `eta` and the environment's discount.
pub fn dataset_pairs(data: &OfflineDataset, env: &Env, spec: &RefPolicySpec, eta: f64) -> Result<Vec<DatasetPair>> {
    let (mdp, policy) = finite_parts(env, spec)?;
    let q_star = q_star_from_distributions(&env_rtg_distribution(env, spec)?, eta)?;
    let q_pi = exact_q_pi(mdp, &policy, env.gamma())?;
    let mut pairs: BTreeMap<(usize, usize, usize), DatasetPair> = BTreeMap::new();
    for tr in data.iter() {
        let (Some(s), Some(a)) = (tr.state.index(), tr.action.index()) else {
            return Err(Error::Unsupported("oracle pairs need discrete states and actions".into()));
        };
        let lookup = |table: &crate::oracle::StepTable<Vec<f64>>| {
            table
                .get(tr.step, s)
                .map(|row| row[a])
                .ok_or_else(|| Error::InputDomain(format!("dataset visits unreachable state {s} at step {}", tr.step)))
        };
        let entry = pairs.entry((tr.step, s, a));
        match entry {
            std::collections::btree_map::Entry::Occupied(mut e) => e.get_mut().count += 1,
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(DatasetPair {
                    step: tr.step,
                    state: s,
                    action: a,
                    count: 1,
                    obs: tr.obs.clone(),
                    act: tr.act.clone(),
                    reward: tr.reward,
                    terminal: tr.terminal,
                    next_obs: tr.next_obs.clone(),
                    q_star: lookup(&q_star)?,
                    q_pi: lookup(&q_pi)?,
                });
            }
        }
    }
    Ok(pairs.into_values().collect())
}

fn rows(pairs: &[DatasetPair], f: impl Fn(&DatasetPair) -> &[f64]) -> Array2<f32> {
    let d = pairs.first().map_or(0, |p| f(p).len());
    Array2::from_shape_fn((pairs.len(), d), |(i, j)| f(&pairs[i])[j] as f32)
}

/// Learned Q* estimate for every pair, one batched pass.
pub fn estimate_q_star(critic: &RewardToGoCritic, pairs: &[DatasetPair], estimator: &QStarEstimator, rng: &mut Rng) -> Result<Vec<f64>> {
    let cond = critic_cond(rows(pairs, |p| &p.obs).view(), rows(pairs, |p| &p.act).view());
    estimator.q_star_batch(critic, cond.view(), rng)
}

/// Mean absolute error of the learned Q* over distinct pairs.
pub fn q_star_mae(critic: &RewardToGoCritic, pairs: &[DatasetPair], estimator: &QStarEstimator, rng: &mut Rng) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InputDomain("no dataset pairs to compare".into()));
    }
    let est = estimate_q_star(critic, pairs, estimator, rng)?;
    Ok(est.iter().zip(pairs).map(|(e, p)| (e - p.q_star).abs()).sum::<f64>() / pairs.len() as f64)
}

/// Per pair, `|mean R(x, a) - (r + gamma mean_{a' ~ policy} mean R(x', a'))|`,
/// with `samples` return draws per mean (one per next action). Terminal
/// pairs compare against `r`.
pub fn bellman_residuals(
    policy: &BasePolicy,
    critic: &RewardToGoCritic,
    pairs: &[DatasetPair],
    samples: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let gamma = critic.config.gamma;
    let cond = critic_cond(rows(pairs, |p| &p.obs).view(), rows(pairs, |p| &p.act).view());
    let here = critic.sample_rtg_batch(cond.view(), samples, rng)?;
    let open: Vec<&DatasetPair> = pairs.iter().filter(|p| !p.terminal).collect();
    let mut next_means = vec![0.0; pairs.len()];
    if !open.is_empty() {
        let next_obs = Array2::from_shape_fn((open.len(), open[0].next_obs.len()), |(i, j)| open[i].next_obs[j] as f32);
        let next_obs = repeat_rows(next_obs.view(), samples);
        let (_, next_act) = policy.sample_batch(next_obs.view(), rng)?;
        let next_cond = critic_cond(next_obs.view(), next_act.view());
        let z = critic.sample_rtg_batch(next_cond.view(), 1, rng)?;
        let mut j = 0;
        for (i, p) in pairs.iter().enumerate() {
            if !p.terminal {
                next_means[i] = z.column(0).slice(ndarray::s![j * samples..(j + 1) * samples]).mean().expect("non-empty");
                j += 1;
            }
        }
    }
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mean = here.row(i).mean().expect("non-empty");
            let target = if p.terminal { p.reward } else { p.reward + gamma * next_means[i] };
            (mean - target).abs()
        })
        .collect())
}

/// Structured oracle comparison of one checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub env: String,
    pub eta: f64,
    pub gamma: f64,
    pub rtg_samples: usize,
    pub pairs: usize,
    /// Mean over distinct dataset pairs.
    pub q_star_mae: f64,
    pub q_star_max_error: f64,
    /// Oracle Q* range over the compared pairs.
    pub q_star_range: f64,
    /// Mean over dataset transitions (pairs weighted by their counts).
    pub bellman_residual: f64,
    pub rows: Vec<OracleReportRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReportRow {
    pub step: usize,
    pub state: usize,
    pub action: usize,
    pub count: usize,
    pub oracle_q_star: f64,
    pub learned_q_star: f64,
    pub bellman_residual: f64,
}

pub fn oracle_report(
    policy: &BasePolicy,
    critic: &RewardToGoCritic,
    pairs: &[DatasetPair],
    env: &Env,
    estimator: &QStarEstimator,
    bellman_samples: usize,
    rng: &mut Rng,
) -> Result<OracleReport> {
    if pairs.is_empty() {
        return Err(Error::InputDomain("no dataset pairs to compare".into()));
    }
    let est = estimate_q_star(critic, pairs, estimator, rng)?;
    let res = bellman_residuals(policy, critic, pairs, bellman_samples, rng)?;
    let errors: Vec<f64> = est.iter().zip(pairs).map(|(e, p)| (e - p.q_star).abs()).collect();
    let total: usize = pairs.iter().map(|p| p.count).sum();
    let hi = pairs.iter().map(|p| p.q_star).fold(f64::NEG_INFINITY, f64::max);
    let lo = pairs.iter().map(|p| p.q_star).fold(f64::INFINITY, f64::min);
    Ok(OracleReport {
        env: env.id().to_string(),
        eta: estimator.tau_r,
        gamma: env.gamma(),
        rtg_samples: estimator.samples,
        pairs: pairs.len(),
        q_star_mae: errors.iter().sum::<f64>() / pairs.len() as f64,
        q_star_max_error: errors.iter().copied().fold(0.0, f64::max),
        q_star_range: hi - lo,
        bellman_residual: res.iter().zip(pairs).map(|(r, p)| r * p.count as f64).sum::<f64>() / total as f64,
        rows: pairs
            .iter()
            .zip(est.iter().zip(&res))
            .map(|(p, (&e, &r))| OracleReportRow {
                step: p.step,
                state: p.state,
                action: p.action,
                count: p.count,
                oracle_q_star: p.q_star,
                learned_q_star: e,
                bellman_residual: r,
            })
            .collect(),
    })
}
