//! Behaviour-cloned flow base policy.

use ndarray::{Array2, ArrayView2};

use crate::env::{Action, ActionSpace};
use crate::error::{Error, Result};
use crate::flow::{euler_sample, fm_loss, ConditionalFlowModel, FlowNetConfig, VelocityField};
use crate::nn::{AdamConfig, AdamState};
use crate::rng::Rng;

/// Flow model over action vectors (or time-major chunks of `chunk` action
/// vectors) conditioned on observations.
#[derive(Clone, Debug)]
pub struct BasePolicy {
    pub flow: ConditionalFlowModel<f32>,
    space: ActionSpace,
    chunk: usize,
    euler_steps: usize,
    optimizer: AdamState<f32>,
}

impl BasePolicy {
    pub fn new(
        obs_dim: usize,
        space: ActionSpace,
        net: &FlowNetConfig,
        euler_steps: usize,
        adam: AdamConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        Self::new_chunked(obs_dim, space, 1, net, euler_steps, adam, rng)
    }

    pub fn new_chunked(
        obs_dim: usize,
        space: ActionSpace,
        chunk: usize,
        net: &FlowNetConfig,
        euler_steps: usize,
        adam: AdamConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        if chunk == 0 {
            return Err(Error::Config("chunk length must be at least 1".into()));
        }
        let flow = net.build(space.dim() * chunk, obs_dim, rng)?;
        Self::from_flow(flow, space, euler_steps, adam)
    }

    pub fn from_flow(
        flow: ConditionalFlowModel<f32>,
        space: ActionSpace,
        euler_steps: usize,
        adam: AdamConfig,
    ) -> Result<Self> {
        if flow.sample_dim() == 0 || flow.sample_dim() % space.dim() != 0 {
            return Err(Error::Shape(format!(
                "flow samples {} dims, not a whole number of {}-dim actions",
                flow.sample_dim(),
                space.dim()
            )));
        }
        let chunk = flow.sample_dim() / space.dim();
        if euler_steps == 0 {
            return Err(Error::Config("Euler steps must be at least 1".into()));
        }
        let optimizer = AdamState::new(adam, &flow.net);
        Ok(BasePolicy {
            flow,
            space,
            chunk,
            euler_steps,
            optimizer,
        })
    }

    pub fn space(&self) -> &ActionSpace {
        &self.space
    }

    /// Actions per sample.
    pub fn chunk(&self) -> usize {
        self.chunk
    }

    pub fn euler_steps(&self) -> usize {
        self.euler_steps
    }

    pub fn obs_dim(&self) -> usize {
        self.flow.cond_dim()
    }

    /// One Adam step on the flow-matching loss of `(obs, act)` pairs.
    /// Returns the minibatch loss before the step.
    pub fn bc_update(&mut self, obs: ArrayView2<f32>, act: ArrayView2<f32>, rng: &mut Rng) -> Result<f32> {
        let (loss, grads) = fm_loss(&self.flow, obs, act, rng).map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("behaviour cloning: {m}")),
            other => other,
        })?;
        self.optimizer.step(&mut self.flow.net, &grads)?;
        Ok(loss)
    }

    /// One raw Euler sample per observation row, before snapping or clipping.
    pub fn sample_raw(&self, obs: ArrayView2<f32>, rng: &mut Rng) -> Result<Array2<f32>> {
        euler_sample(&self.flow, obs, self.euler_steps, rng)
    }

    /// One projected action per observation row, with its embedding. For
    /// chunked policies this is the first action of each chunk alongside the
    /// whole chunk's embedding.
    pub fn sample_batch(&self, obs: ArrayView2<f32>, rng: &mut Rng) -> Result<(Vec<Action>, Array2<f32>)> {
        let (chunks, emb) = self.sample_chunks(obs, rng)?;
        Ok((chunks.into_iter().map(|mut c| c.swap_remove(0)).collect(), emb))
    }

    /// One projected chunk per observation row, with its embedding.
    pub fn sample_chunks(&self, obs: ArrayView2<f32>, rng: &mut Rng) -> Result<(Vec<Vec<Action>>, Array2<f32>)> {
        let raw = self.sample_raw(obs, rng)?;
        Ok(project_chunks(&self.space, raw.view()))
    }

    pub fn sample_action(&self, obs: &[f64], rng: &mut Rng) -> Result<Action> {
        let row = Array2::from_shape_fn((1, obs.len()), |(_, j)| obs[j] as f32);
        Ok(self.sample_batch(row.view(), rng)?.0.remove(0))
    }
}

/// Snap or clip every action slot of each raw row; rows hold time-major
/// chunks of `space.dim()`-wide actions.
pub fn project_chunks(space: &ActionSpace, raw: ArrayView2<f32>) -> (Vec<Vec<Action>>, Array2<f32>) {
    let d = space.dim();
    let mut emb = Array2::zeros(raw.raw_dim());
    let chunks = raw
        .outer_iter()
        .enumerate()
        .map(|(i, row)| {
            let row = row.to_vec();
            row.chunks(d)
                .enumerate()
                .map(|(slot, v)| {
                    let v: Vec<f64> = v.iter().map(|&x| x as f64).collect();
                    let action = space.project(&v);
                    let e = space.embed(&action).expect("projection lands in the space");
                    for (j, x) in e.into_iter().enumerate() {
                        emb[[i, slot * d + j]] = x as f32;
                    }
                    action
                })
                .collect()
        })
        .collect();
    (chunks, emb)
}

/// Snap or clip each raw row and return the actions with their embeddings.
pub fn project_rows(space: &ActionSpace, raw: ArrayView2<f32>) -> (Vec<Action>, Array2<f32>) {
    let (chunks, emb) = project_chunks(space, raw);
    (chunks.into_iter().map(|mut c| c.swap_remove(0)).collect(), emb)
}
