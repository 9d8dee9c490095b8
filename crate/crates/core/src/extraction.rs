//! Inference-time policy extraction: sample candidate actions from the base
//! policy, score them with the LogSumExp Q estimate and pick one by a
//! temperature softmax.

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critic::{critic_cond, log_mean_exp, RewardToGoCritic};
use crate::env::{Action, Env, State, TabularPolicy};
use crate::error::{Error, Result};
use crate::flow::{euler_sample, repeat_rows};
use crate::policy::{project_rows, BasePolicy};
use crate::rng::{stream, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    Softmax,
    /// First candidate with the largest score.
    Argmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractionConfig {
    /// Candidate actions per decision.
    pub candidates: usize,
    /// Return samples per candidate.
    pub rtg_samples: usize,
    /// LogSumExp temperature.
    pub tau_r: f64,
    /// Softmax temperature over candidate scores.
    pub tau_q: f64,
    pub euler_steps: usize,
    pub selection: Selection,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            candidates: 32,
            rtg_samples: 50,
            tau_r: 1.0,
            tau_q: 1e-3,
            euler_steps: 10,
            selection: Selection::Softmax,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates == 0 || self.rtg_samples == 0 || self.euler_steps == 0 {
            return Err(Error::Config("candidate, sample and step counts must be positive".into()));
        }
        if !(self.tau_r > 0.0 && self.tau_q > 0.0) {
            return Err(Error::Config(format!("temperatures {} / {} must be positive", self.tau_r, self.tau_q)));
        }
        Ok(())
    }
}

/// Selection probabilities `softmax(scores / tau)`, shifted by the maximum.
pub fn softmax_probs(scores: &[f64], tau: f64) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = scores.iter().map(|&s| ((s - m) / tau).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Draw an index from `softmax(scores / tau)` with one uniform.
pub fn softmax_select(scores: &[f64], tau: f64, rng: &mut Rng) -> usize {
    let probs = softmax_probs(scores, tau);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Index of the first maximal score.
pub fn argmax_select(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn obs_row(obs: &[f64]) -> Array2<f32> {
    Array2::from_shape_fn((1, obs.len()), |(_, j)| obs[j] as f32)
}

/// Draw `n` candidates for one observation: projected actions and embeddings.
pub fn draw_candidates(policy: &BasePolicy, obs: &[f64], n: usize, steps: usize, rng: &mut Rng) -> Result<(Vec<Action>, Array2<f32>)> {
    let cond = repeat_rows(obs_row(obs).view(), n);
    let raw = euler_sample(&policy.flow, cond.view(), steps, rng)?;
    Ok(project_rows(policy.space(), raw.view()))
}

/// LogSumExp scores of candidate embeddings, all return rollouts in one
/// batched pass.
pub fn score_candidates(
    critic: &RewardToGoCritic,
    obs: &[f64],
    emb: ArrayView2<f32>,
    config: &ExtractionConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let obs = repeat_rows(obs_row(obs).view(), emb.nrows());
    let cond = critic_cond(obs.view(), emb);
    let n = config.rtg_samples;
    let rows = repeat_rows(cond.view(), n);
    let z = euler_sample(&critic.online, rows.view(), config.euler_steps, rng)?;
    let scale = critic.config.return_scale;
    Ok((0..emb.nrows())
        .map(|i| {
            let samples: Vec<f64> = (0..n).map(|j| z[[i * n + j, 0]] as f64 / scale).collect();
            log_mean_exp(&samples, config.tau_r)
        })
        .collect())
}

/// One extracted action for observation `obs`.
pub fn extract_action(
    policy: &BasePolicy,
    critic: &RewardToGoCritic,
    obs: &[f64],
    config: &ExtractionConfig,
    rng: &mut Rng,
) -> Result<Action> {
    let (mut actions, emb) = draw_candidates(policy, obs, config.candidates, config.euler_steps, rng)?;
    if actions.len() == 1 {
        return Ok(actions.remove(0));
    }
    let scores = score_candidates(critic, obs, emb.view(), config, rng)?;
    let pick = match config.selection {
        Selection::Softmax => softmax_select(&scores, config.tau_q, rng),
        Selection::Argmax => argmax_select(&scores),
    };
    Ok(actions.swap_remove(pick))
}

/// Anything that chooses actions in an environment. A plan holds one or
/// more actions executed open-loop before the next call.
pub trait ActionSelector: Sync {
    fn plan(&self, state: &State, obs: &[f64], rng: &mut Rng) -> Result<Vec<Action>>;
}

/// The base policy with extraction on top.
#[derive(Clone, Copy)]
pub struct Extractor<'a> {
    pub policy: &'a BasePolicy,
    pub critic: &'a RewardToGoCritic,
    pub config: &'a ExtractionConfig,
}

impl ActionSelector for Extractor<'_> {
    fn plan(&self, _state: &State, obs: &[f64], rng: &mut Rng) -> Result<Vec<Action>> {
        Ok(vec![extract_action(self.policy, self.critic, obs, self.config, rng)?])
    }
}

/// Plain base-policy sampling (whole chunks for chunked policies).
pub struct BaseSampler<'a>(pub &'a BasePolicy);

impl ActionSelector for BaseSampler<'_> {
    fn plan(&self, _state: &State, obs: &[f64], rng: &mut Rng) -> Result<Vec<Action>> {
        let row = Array2::from_shape_fn((1, obs.len()), |(_, j)| obs[j] as f32);
        Ok(self.0.sample_chunks(row.view(), rng)?.0.remove(0))
    }
}

impl ActionSelector for TabularPolicy {
    fn plan(&self, state: &State, _obs: &[f64], rng: &mut Rng) -> Result<Vec<Action>> {
        let s = state
            .index()
            .filter(|&s| s < self.num_states())
            .ok_or_else(|| Error::InputDomain(format!("tabular policy cannot act in {state:?}")))?;
        Ok(vec![Action::Discrete(self.sample(s, rng))])
    }
}

/// Aggregate of one evaluation block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub mean_return: f64,
    pub std_return: f64,
    pub success_rate: f64,
    /// Undiscounted return of each episode, in episode order.
    pub returns: Vec<f64>,
}

impl EvalStats {
    pub fn from_returns(env: &Env, returns: Vec<f64>) -> Self {
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        let success = returns.iter().filter(|&&r| env.is_success(r)).count() as f64 / n;
        EvalStats {
            mean_return: mean,
            std_return: var.sqrt(),
            success_rate: success,
            returns,
        }
    }
}

/// Undiscounted return of one episode.
pub fn rollout(env: &Env, selector: &dyn ActionSelector, rng: &mut Rng) -> Result<f64> {
    let mut state = env.reset();
    let mut total = 0.0;
    loop {
        let obs = env.observe(&state);
        let plan = selector.plan(&state, &obs, rng)?;
        if plan.is_empty() {
            return Err(Error::InputDomain("selector returned an empty plan".into()));
        }
        for action in &plan {
            let out = env.step(&state, action)?;
            total += out.reward;
            if out.terminal {
                return Ok(total);
            }
            state = out.next;
        }
    }
}

/// Run `episodes` rollouts, episode `i` on stream `i` of `seed`.
pub fn evaluate_policy(env: &Env, selector: &dyn ActionSelector, episodes: usize, seed: u64) -> Result<EvalStats> {
    if episodes == 0 {
        return Err(Error::InputDomain("evaluation needs at least one episode".into()));
    }
    let returns = (0..episodes)
        .into_par_iter()
        .map(|i| rollout(env, selector, &mut stream(seed, i as u64)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(EvalStats::from_returns(env, returns))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvId, RefPolicySpec};
    use crate::rng::seeded;

    #[test]
    fn single_candidate_is_returned_unscored() {
        let mut rng = seeded(0);
        let env = Env::new(EnvId::Chain2);
        let policy = BasePolicy::new(3, env.action_space(), &Default::default(), 10, Default::default(), &mut rng).unwrap();
        let critic = RewardToGoCritic::new(3, 2, &Default::default(), Default::default(), Default::default(), &mut rng).unwrap();
        let config = ExtractionConfig {
            candidates: 1,
            ..Default::default()
        };
        let obs = [1.0, 0.0, 0.0];
        let direct = draw_candidates(&policy, &obs, 1, 10, &mut seeded(4)).unwrap().0[0].clone();
        assert_eq!(extract_action(&policy, &critic, &obs, &config, &mut seeded(4)).unwrap(), direct);
    }

    #[test]
    fn tiny_temperature_is_argmax() {
        let p = softmax_probs(&[1.0, 2.0], 1e-6);
        assert!(p[1] >= 1.0 - 1e-9);
    }

    #[test]
    fn shifted_scores_select_identically() {
        let a = softmax_probs(&[0.3, -1.0, 2.0], 0.5);
        let b = softmax_probs(&[100.3, 99.0, 102.0], 0.5);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_scores_select_uniformly() {
        assert_eq!(softmax_probs(&[0.4; 4], 1e-3), vec![0.25; 4]);
        assert_eq!(argmax_select(&[0.4; 4]), 0);
    }

    #[test]
    fn oracle_optimal_chain_policy_earns_two() {
        let env = Env::new(EnvId::Chain2);
        let always_a0 = TabularPolicy::new(vec![vec![1.0, 0.0]; 3]).unwrap();
        let stats = evaluate_policy(&env, &always_a0, 20, 1).unwrap();
        assert_eq!(stats.mean_return, 2.0);
        assert_eq!(stats.success_rate, 1.0);
        assert_eq!(stats.std_return, 0.0);
    }

    #[test]
    fn evaluation_is_reproducible() {
        let env = Env::new(EnvId::Gridworld5);
        let pi = env.ref_policy(&RefPolicySpec::default()).unwrap();
        let pi = pi.as_tabular().unwrap();
        let a = evaluate_policy(&env, pi, 40, 9).unwrap();
        let b = evaluate_policy(&env, pi, 40, 9).unwrap();
        assert_eq!(a, b);
        assert!(evaluate_policy(&env, pi, 0, 9).is_err());
    }
}
