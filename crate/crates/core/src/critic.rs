//! Distributional critic over rewards-to-go, trained by flow-based TD, and
//! the sample-averaged LogSumExp estimate of the optimal regularised Q.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::batch::TrainingBatch;
use crate::error::{Error, Result};
use crate::flow::{euler_integrate, euler_sample, repeat_rows, squared_error, ConditionalFlowModel, FlowNetConfig, VelocityField};
use crate::nn::{grad, polyak_update, AdamConfig, AdamState, Real};
use crate::policy::BasePolicy;
use crate::rng::Rng;

/// Where the bootstrapped velocity is queried in the next state's flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TdTarget {
    /// `r + gamma * v'((z_t - t r) / gamma, t)`: the next-state flow at the
    /// point that the reward translation maps `z_t` to. Exact for `gamma = 1`.
    #[default]
    Translated,
    /// `r + gamma * v'(z_t, t)`: the next-state flow at `z_t` itself.
    AsWritten,
}

impl TdTarget {
    /// Point at which the next-state velocity is evaluated.
    pub fn query(self, reward: f64, gamma: f64, zt: f64, t: f64) -> f64 {
        match self {
            TdTarget::Translated => (zt - t * reward) / gamma,
            TdTarget::AsWritten => zt,
        }
    }
}

/// Which next action conditions the bootstrap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NextActionSource {
    /// The logged next action of the same trajectory.
    #[default]
    Dataset,
    /// Fresh draws from the base policy at the next observation.
    Policy,
}

/// Where the interpolation endpoint `z1` comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RtgSource {
    /// The annotated Monte-Carlo return of the transition.
    #[default]
    Dataset,
    /// A sample of the target critic's own return distribution.
    TargetModel,
}

/// Exact velocity carrying `N(0, 1)` to a point mass at `reward`, with the
/// time clamped below `t_max`.
pub fn terminal_velocity(reward: f64, zt: f64, t: f64, t_max: f64) -> f64 {
    (reward - zt) / (1.0 - t.min(t_max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticConfig {
    pub gamma: f64,
    /// Polyak coefficient of the target copy.
    pub polyak: f64,
    pub euler_steps: usize,
    pub td_target: TdTarget,
    pub next_action: NextActionSource,
    /// Next-action draws averaged per transition in policy mode.
    pub next_action_samples: usize,
    pub rtg_source: RtgSource,
    pub t_clamp: f64,
    /// Returns are multiplied by this before entering the flow.
    pub return_scale: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig {
            gamma: 0.99,
            polyak: 5e-3,
            euler_steps: 10,
            td_target: TdTarget::Translated,
            next_action: NextActionSource::Dataset,
            next_action_samples: 1,
            rtg_source: RtgSource::Dataset,
            t_clamp: 0.99,
            return_scale: 1.0,
        }
    }
}

impl CriticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            return bad(format!("polyak coefficient {} outside [0, 1]", self.polyak));
        }
        if self.euler_steps == 0 || self.next_action_samples == 0 {
            return bad("Euler steps and next-action samples must be positive".into());
        }
        if !(0.0..1.0).contains(&self.t_clamp) {
            return bad(format!("time clamp {} outside [0, 1)", self.t_clamp));
        }
        if !(self.return_scale > 0.0 && self.return_scale.is_finite()) {
            return bad(format!("return scale {} must be positive", self.return_scale));
        }
        Ok(())
    }
}

/// `[obs | action embedding]` rows.
pub fn critic_cond(obs: ArrayView2<f32>, act: ArrayView2<f32>) -> Array2<f32> {
    concatenate(Axis(1), &[obs.view(), act.view()]).expect("row counts agree")
}

/// Flow over scalar returns conditioned on `(obs, action)`, with a Polyak
/// target copy.
#[derive(Clone, Debug)]
pub struct RewardToGoCritic {
    pub online: ConditionalFlowModel<f32>,
    pub target: ConditionalFlowModel<f32>,
    pub config: CriticConfig,
    optimizer: AdamState<f32>,
}

impl RewardToGoCritic {
    pub fn new(
        obs_dim: usize,
        act_dim: usize,
        net: &FlowNetConfig,
        config: CriticConfig,
        adam: AdamConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let online = net.build(1, obs_dim + act_dim, rng)?;
        Self::from_parts(online.clone(), online, config, adam)
    }

    pub fn from_parts(
        online: ConditionalFlowModel<f32>,
        target: ConditionalFlowModel<f32>,
        config: CriticConfig,
        adam: AdamConfig,
    ) -> Result<Self> {
        config.validate()?;
        if online.sample_dim() != 1 || online.net.spec() != target.net.spec() {
            return Err(Error::Shape("critic needs matching scalar online and target flows".into()));
        }
        let optimizer = AdamState::new(adam, &online.net);
        Ok(RewardToGoCritic {
            online,
            target,
            config,
            optimizer,
        })
    }

    pub fn cond_dim(&self) -> usize {
        self.online.cond_dim()
    }

    /// One flow-TD step on `batch`; returns the loss before the step.
    ///
    /// Draw order: `z0` for every row, then `t` for every row, then target
    /// returns (if bootstrapped from the model), then next actions (if drawn
    /// from the policy).
    pub fn flow_td_update(&mut self, policy: &BasePolicy, batch: &TrainingBatch, rng: &mut Rng) -> Result<f32> {
        let n = batch.len();
        let cfg = self.config.clone();
        let scale = cfg.return_scale;
        let z0: Vec<f64> = (0..n).map(|_| f64::standard_normal(rng)).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let cond = critic_cond(batch.obs.view(), batch.act.view());
        let z1: Vec<f64> = match cfg.rtg_source {
            RtgSource::Dataset => batch.ret.iter().map(|&z| z as f64 * scale).collect(),
            RtgSource::TargetModel => euler_sample(&self.target, cond.view(), cfg.euler_steps, rng)?
                .iter()
                .map(|&z| z as f64)
                .collect(),
        };
        let reward: Vec<f64> = batch.reward.iter().map(|&r| r as f64 * scale).collect();
        let zt: Vec<f64> = (0..n).map(|i| (1.0 - t[i]) * z0[i] + t[i] * z1[i]).collect();

        let bootstraps = cfg.gamma > 0.0;
        let mut targets: Vec<f64> = (0..n)
            .map(|i| terminal_velocity(reward[i], zt[i], t[i], cfg.t_clamp))
            .collect();
        let open: Vec<usize> = (0..n).filter(|&i| bootstraps && !batch.terminal[i]).collect();
        if !open.is_empty() {
            let k = match cfg.next_action {
                NextActionSource::Dataset => 1,
                NextActionSource::Policy => cfg.next_action_samples,
            };
            let next_obs = batch.next_obs.select(Axis(0), &open);
            let next_obs = repeat_rows(next_obs.view(), k);
            let next_act = match cfg.next_action {
                NextActionSource::Dataset => batch.next_act.select(Axis(0), &open),
                NextActionSource::Policy => policy.sample_batch(next_obs.view(), rng)?.1,
            };
            let next_cond = critic_cond(next_obs.view(), next_act.view());
            let mut query = Array2::<f32>::zeros((open.len() * k, 1));
            let mut times = Array1::<f32>::zeros(open.len() * k);
            for (j, &i) in open.iter().enumerate() {
                let q = cfg.td_target.query(reward[i], cfg.gamma, zt[i], t[i]);
                for r in 0..k {
                    query[[j * k + r, 0]] = q as f32;
                    times[j * k + r] = t[i] as f32;
                }
            }
            let v = self.target.velocity(query.view(), times.view(), next_cond.view())?;
            for (j, &i) in open.iter().enumerate() {
                let mean_v: f64 = v.slice(s![j * k..(j + 1) * k, 0]).iter().map(|&x| x as f64).sum::<f64>() / k as f64;
                targets[i] = reward[i] + cfg.gamma * mean_v;
            }
        }
        if let Some(i) = targets.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "flow-TD target {} for dataset transition {}",
                targets[i], batch.indices[i]
            )));
        }

        let target = Array2::from_shape_fn((n, 1), |(i, _)| targets[i] as f32);
        let zt32 = Array2::from_shape_fn((n, 1), |(i, _)| zt[i] as f32);
        let t32: Array1<f32> = t.iter().map(|&v| v as f32).collect();
        let input = self.online.assemble(zt32.view(), t32.view(), cond.view())?;
        let (loss, grads) = grad(&self.online.net, input.view(), |pred| squared_error(pred, target.view()))
            .map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("flow-TD loss: {m}")),
                other => other,
            })?;
        self.optimizer.step(&mut self.online.net, &grads)?;
        polyak_update(&mut self.target.net, &self.online.net, cfg.polyak)?;
        Ok(loss)
    }

    /// `n` return samples per condition row, in return units; row `i` of the
    /// result holds the samples for condition `i`. Noise is drawn row-major.
    pub fn sample_rtg_batch(&self, cond: ArrayView2<f32>, n: usize, rng: &mut Rng) -> Result<Array2<f64>> {
        if n == 0 {
            return Err(Error::InputDomain("need at least one return sample".into()));
        }
        let rows = repeat_rows(cond, n);
        let z = euler_sample(&self.online, rows.view(), self.config.euler_steps, rng)?;
        let scale = self.config.return_scale;
        Ok(Array2::from_shape_fn((cond.nrows(), n), |(i, j)| z[[i * n + j, 0]] as f64 / scale))
    }

    pub fn sample_rtg(&self, obs: &[f64], act: &[f64], n: usize, rng: &mut Rng) -> Result<Vec<f64>> {
        let cond = Array2::from_shape_fn((1, obs.len() + act.len()), |(_, j)| {
            (if j < obs.len() { obs[j] } else { act[j - obs.len()] }) as f32
        });
        Ok(self.sample_rtg_batch(cond.view(), n, rng)?.row(0).to_vec())
    }

    /// Integrate the online flow from the given starting noise.
    pub fn transport(&self, z0: ArrayView2<f32>, cond: ArrayView2<f32>) -> Result<Array2<f32>> {
        euler_integrate(&self.online, z0.to_owned(), cond, self.config.euler_steps)
    }
}

/// `tau * ln(mean_j exp(z_j / tau))`, shifted by the maximum sample.
pub fn log_mean_exp(samples: &[f64], tau: f64) -> f64 {
    let m = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = samples.iter().map(|&z| ((z - m) / tau).exp()).sum::<f64>() / samples.len() as f64;
    m + tau * mean.ln()
}

/// LogSumExp estimator of the optimal regularised Q over sampled returns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QStarEstimator {
    pub tau_r: f64,
    pub samples: usize,
}

impl QStarEstimator {
    pub fn new(tau_r: f64, samples: usize) -> Result<Self> {
        if !(tau_r > 0.0 && tau_r.is_finite()) || samples == 0 {
            return Err(Error::Config(format!(
                "LogSumExp temperature {tau_r} must be positive and sample count {samples} at least 1"
            )));
        }
        Ok(QStarEstimator { tau_r, samples })
    }

    /// One estimate per condition row from a single batched Euler pass.
    pub fn q_star_batch(&self, critic: &RewardToGoCritic, cond: ArrayView2<f32>, rng: &mut Rng) -> Result<Vec<f64>> {
        let z = critic.sample_rtg_batch(cond, self.samples, rng)?;
        Ok(z.outer_iter()
            .map(|row| log_mean_exp(row.as_slice().expect("contiguous"), self.tau_r))
            .collect())
    }

    pub fn q_star(&self, critic: &RewardToGoCritic, obs: &[f64], act: &[f64], rng: &mut Rng) -> Result<f64> {
        let z = critic.sample_rtg(obs, act, self.samples, rng)?;
        Ok(log_mean_exp(&z, self.tau_r))
    }
}
