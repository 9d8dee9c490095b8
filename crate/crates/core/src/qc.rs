//! Q-chunking baseline: a scalar TD critic ensemble over length-`k` action
//! chunks, trained with k-step returns and best-of-N bootstrapping, and
//! argmax rejection sampling at inference.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::critic::critic_cond;
use crate::env::{Action, OfflineDataset, State};
use crate::error::{Error, Result};
use crate::extraction::{argmax_select, ActionSelector};
use crate::flow::{repeat_rows, squared_error};
use crate::nn::{grad, polyak_update, Activation, AdamConfig, AdamState, Mlp, MlpSpec};
use crate::policy::BasePolicy;
use crate::rng::Rng;

/// Members of the critic ensemble.
pub const ENSEMBLE: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QcConfig {
    /// Actions per chunk.
    pub chunk: usize,
    pub gamma: f64,
    pub polyak: f64,
    /// Policy chunks scored per bootstrap state; the best one is used.
    pub bootstrap_candidates: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for QcConfig {
    fn default() -> Self {
        QcConfig {
            chunk: 1,
            gamma: 0.99,
            polyak: 5e-3,
            bootstrap_candidates: 32,
            hidden: vec![64, 64],
            activation: Activation::Gelu,
        }
    }
}

impl QcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk == 0 || self.bootstrap_candidates == 0 {
            return Err(Error::Config("chunk length and bootstrap candidates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.polyak) {
            return Err(Error::Config(format!(
                "gamma {} and polyak coefficient {} must lie in [0, 1]",
                self.gamma, self.polyak
            )));
        }
        Ok(())
    }
}

/// Per-transition chunk windows of a dataset, trajectory-major.
///
/// Row `i` starts at transition `i`. A window that reaches past the end of
/// its trajectory has a truncated reward sum, an action chunk padded by
/// repeating the last logged action, and no bootstrap (`discount = 0`).
#[derive(Clone, Debug)]
pub struct ChunkDataset {
    pub chunk: usize,
    pub obs: Array2<f32>,
    /// Time-major flattened action chunks.
    pub actions: Array2<f32>,
    /// `sum_j gamma^j r_{h+j}` over the window.
    pub reward_sum: Array1<f32>,
    /// Observation `k` steps ahead (zeros when not bootstrapped).
    pub boot_obs: Array2<f32>,
    /// `gamma^k` when the window bootstraps, else 0.
    pub discount: Array1<f32>,
}

/// A minibatch of chunk windows.
#[derive(Clone, Debug)]
pub struct ChunkBatch {
    pub indices: Vec<usize>,
    pub obs: Array2<f32>,
    pub actions: Array2<f32>,
    pub reward_sum: Array1<f32>,
    pub boot_obs: Array2<f32>,
    pub discount: Array1<f32>,
}

impl ChunkBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

impl ChunkDataset {
    pub fn new(data: &OfflineDataset, chunk: usize, gamma: f64) -> Result<Self> {
        if chunk == 0 {
            return Err(Error::Config("chunk length must be at least 1".into()));
        }
        let n = data.len();
        let (o, a) = (data.meta.obs_dim, data.meta.act_dim);
        let mut out = ChunkDataset {
            chunk,
            obs: Array2::zeros((n, o)),
            actions: Array2::zeros((n, chunk * a)),
            reward_sum: Array1::zeros(n),
            boot_obs: Array2::zeros((n, o)),
            discount: Array1::zeros(n),
        };
        let mut row = 0;
        for traj in &data.trajectories {
            for h in 0..traj.len() {
                let tr = &traj[h];
                for (j, &v) in tr.obs.iter().enumerate() {
                    out.obs[[row, j]] = v as f32;
                }
                let mut sum = 0.0;
                let mut weight = 1.0;
                let mut last = h;
                for slot in 0..chunk {
                    let step = (h + slot).min(traj.len() - 1);
                    if h + slot < traj.len() {
                        sum += weight * traj[step].reward;
                        weight *= gamma;
                        last = step;
                    }
                    for (j, &v) in traj[step].act.iter().enumerate() {
                        out.actions[[row, slot * a + j]] = v as f32;
                    }
                }
                out.reward_sum[row] = sum as f32;
                let full = h + chunk <= traj.len();
                if full && !traj[last].terminal && gamma > 0.0 {
                    out.discount[row] = gamma.powi(chunk as i32) as f32;
                    for (j, &v) in traj[last].next_obs.iter().enumerate() {
                        out.boot_obs[[row, j]] = v as f32;
                    }
                }
                row += 1;
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.obs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn gather(&self, indices: Vec<usize>) -> ChunkBatch {
        ChunkBatch {
            obs: self.obs.select(Axis(0), &indices),
            actions: self.actions.select(Axis(0), &indices),
            reward_sum: self.reward_sum.select(Axis(0), &indices),
            boot_obs: self.boot_obs.select(Axis(0), &indices),
            discount: self.discount.select(Axis(0), &indices),
            indices,
        }
    }

    /// `size` windows drawn uniformly with replacement.
    pub fn sample(&self, size: usize, rng: &mut Rng) -> ChunkBatch {
        let n = self.len();
        let indices = (0..size).map(|_| rng.gen_range(0..n)).collect();
        self.gather(indices)
    }
}

/// Ensemble of scalar Q networks on `[obs | chunk]` with Polyak targets.
#[derive(Clone, Debug)]
pub struct ScalarCritic {
    pub members: Vec<Mlp<f32>>,
    pub targets: Vec<Mlp<f32>>,
    pub config: QcConfig,
    optimizers: Vec<AdamState<f32>>,
}

impl ScalarCritic {
    pub fn new(obs_dim: usize, chunk_dim: usize, config: QcConfig, adam: AdamConfig, rng: &mut Rng) -> Result<Self> {
        let spec = MlpSpec::new(obs_dim + chunk_dim, &config.hidden, 1)
            .with_activation(config.activation)
            .with_layer_norm(true);
        let members = (0..ENSEMBLE)
            .map(|_| Mlp::init(spec.clone(), rng))
            .collect::<Result<Vec<_>>>()?;
        Self::from_members(members.clone(), members, config, adam)
    }

    pub fn from_members(members: Vec<Mlp<f32>>, targets: Vec<Mlp<f32>>, config: QcConfig, adam: AdamConfig) -> Result<Self> {
        config.validate()?;
        if members.len() != ENSEMBLE || targets.len() != ENSEMBLE {
            return Err(Error::Shape(format!("critic ensemble needs {ENSEMBLE} members and targets")));
        }
        let spec = members[0].spec();
        if spec.output != 1 || members.iter().chain(&targets).any(|m| m.spec() != spec) {
            return Err(Error::Shape("ensemble members must share one scalar-output shape".into()));
        }
        let optimizers = members.iter().map(|m| AdamState::new(adam, m)).collect();
        Ok(ScalarCritic {
            members,
            targets,
            config,
            optimizers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.members[0].input_dim()
    }

    /// Per-member predictions, `(members, rows)`.
    fn predict(nets: &[Mlp<f32>], obs: ArrayView2<f32>, chunks: ArrayView2<f32>) -> Result<Array2<f32>> {
        let input = critic_cond(obs, chunks);
        let mut out = Array2::zeros((nets.len(), input.nrows()));
        for (m, net) in nets.iter().enumerate() {
            out.row_mut(m).assign(&net.forward(input.view())?.column(0));
        }
        Ok(out)
    }

    /// Every online member's value, `(members, rows)`.
    pub fn member_values(&self, obs: ArrayView2<f32>, chunks: ArrayView2<f32>) -> Result<Array2<f32>> {
        Self::predict(&self.members, obs, chunks)
    }

    /// Ensemble minimum of the online members.
    pub fn value(&self, obs: ArrayView2<f32>, chunks: ArrayView2<f32>) -> Result<Vec<f32>> {
        Ok(min_over_members(&self.member_values(obs, chunks)?))
    }

    /// Ensemble minimum of the target members.
    pub fn target_value(&self, obs: ArrayView2<f32>, chunks: ArrayView2<f32>) -> Result<Vec<f32>> {
        Ok(min_over_members(&Self::predict(&self.targets, obs, chunks)?))
    }

    /// Regression targets for a batch: the window reward sum plus the
    /// discounted target value of the best of `bootstrap_candidates` policy
    /// chunks at the bootstrap observation.
    pub fn td_targets(&self, policy: &BasePolicy, batch: &ChunkBatch, rng: &mut Rng) -> Result<Vec<f64>> {
        let mut targets: Vec<f64> = batch.reward_sum.iter().map(|&r| r as f64).collect();
        let open: Vec<usize> = (0..batch.len()).filter(|&i| batch.discount[i] > 0.0).collect();
        if open.is_empty() {
            return Ok(targets);
        }
        let n = self.config.bootstrap_candidates;
        let boot = repeat_rows(batch.boot_obs.select(Axis(0), &open).view(), n);
        let (_, chunks) = policy.sample_chunks(boot.view(), rng)?;
        let values = self.target_value(boot.view(), chunks.view())?;
        for (j, &i) in open.iter().enumerate() {
            let best = values[j * n..(j + 1) * n].iter().copied().fold(f32::NEG_INFINITY, f32::max);
            targets[i] += batch.discount[i] as f64 * best as f64;
        }
        if let Some(i) = targets.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "chunked TD target {} for dataset transition {}",
                targets[i], batch.indices[i]
            )));
        }
        Ok(targets)
    }

    /// One Adam step per member on the squared TD error, then Polyak
    /// updates. Returns the member-averaged loss before the step.
    pub fn qc_td_update(&mut self, policy: &BasePolicy, batch: &ChunkBatch, rng: &mut Rng) -> Result<f32> {
        let targets = self.td_targets(policy, batch, rng)?;
        let target = Array2::from_shape_fn((batch.len(), 1), |(i, _)| targets[i] as f32);
        let input = critic_cond(batch.obs.view(), batch.actions.view());
        let mut total = 0.0;
        for m in 0..ENSEMBLE {
            let (loss, grads) = grad(&self.members[m], input.view(), |pred| squared_error(pred, target.view())).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("chunked TD loss: {msg}")),
                other => other,
            })?;
            self.optimizers[m].step(&mut self.members[m], &grads)?;
            polyak_update(&mut self.targets[m], &self.members[m], self.config.polyak)?;
            total += loss;
        }
        Ok(total / ENSEMBLE as f32)
    }
}

fn min_over_members(values: &Array2<f32>) -> Vec<f32> {
    values.fold_axis(Axis(0), f32::INFINITY, |&a, &b| a.min(b)).to_vec()
}

/// Best of `candidates` policy chunks under the online ensemble minimum;
/// ties go to the lowest index.
pub fn qc_select_action(
    policy: &BasePolicy,
    critic: &ScalarCritic,
    obs: &[f64],
    candidates: usize,
    rng: &mut Rng,
) -> Result<Vec<Action>> {
    if candidates == 0 {
        return Err(Error::InputDomain("need at least one candidate chunk".into()));
    }
    let row = Array2::from_shape_fn((1, obs.len()), |(_, j)| obs[j] as f32);
    let rows = repeat_rows(row.view(), candidates);
    let (mut chunks, emb) = policy.sample_chunks(rows.view(), rng)?;
    if candidates == 1 {
        return Ok(chunks.remove(0));
    }
    let scores: Vec<f64> = critic.value(rows.view(), emb.view())?.into_iter().map(f64::from).collect();
    Ok(chunks.swap_remove(argmax_select(&scores)))
}

/// Chunked policy with argmax extraction; chunks execute open-loop.
#[derive(Clone, Copy)]
pub struct QcAgent<'a> {
    pub policy: &'a BasePolicy,
    pub critic: &'a ScalarCritic,
    pub candidates: usize,
}

impl ActionSelector for QcAgent<'_> {
    fn plan(&self, _state: &State, obs: &[f64], rng: &mut Rng) -> Result<Vec<Action>> {
        qc_select_action(self.policy, self.critic, obs, self.candidates, rng)
    }
}
