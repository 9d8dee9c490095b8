//! Dense `f32` views of an offline dataset and minibatch gathering.

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;

use crate::env::OfflineDataset;
use crate::rng::Rng;

/// Every transition of a dataset as stacked rows, trajectory-major.
#[derive(Clone, Debug)]
pub struct FlatDataset {
    pub obs: Array2<f32>,
    pub act: Array2<f32>,
    pub reward: Array1<f32>,
    pub next_obs: Array2<f32>,
    /// Logged action at the next step; zero rows for terminal transitions.
    pub next_act: Array2<f32>,
    pub terminal: Vec<bool>,
    pub ret: Array1<f32>,
}

/// A minibatch: the gathered rows plus their flat indices.
#[derive(Clone, Debug)]
pub struct TrainingBatch {
    pub indices: Vec<usize>,
    pub obs: Array2<f32>,
    pub act: Array2<f32>,
    pub reward: Array1<f32>,
    pub next_obs: Array2<f32>,
    pub next_act: Array2<f32>,
    pub terminal: Vec<bool>,
    pub ret: Array1<f32>,
}

fn rows(n: usize, d: usize, mut f: impl FnMut(usize) -> Vec<f64>) -> Array2<f32> {
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        for (o, v) in out.row_mut(i).iter_mut().zip(f(i)) {
            *o = v as f32;
        }
    }
    out
}

impl FlatDataset {
    pub fn new(data: &OfflineDataset) -> Self {
        let n = data.len();
        let (o, a) = (data.meta.obs_dim, data.meta.act_dim);
        FlatDataset {
            obs: rows(n, o, |i| data.get(i).obs.clone()),
            act: rows(n, a, |i| data.get(i).act.clone()),
            reward: (0..n).map(|i| data.get(i).reward as f32).collect(),
            next_obs: rows(n, o, |i| data.get(i).next_obs.clone()),
            next_act: rows(n, a, |i| data.ahead(i, 1).map_or(vec![0.0; a], |t| t.act.clone())),
            terminal: (0..n).map(|i| data.get(i).terminal).collect(),
            ret: (0..n).map(|i| data.get(i).ret as f32).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.obs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn gather(&self, indices: Vec<usize>) -> TrainingBatch {
        TrainingBatch {
            obs: self.obs.select(Axis(0), &indices),
            act: self.act.select(Axis(0), &indices),
            reward: self.reward.select(Axis(0), &indices),
            next_obs: self.next_obs.select(Axis(0), &indices),
            next_act: self.next_act.select(Axis(0), &indices),
            terminal: indices.iter().map(|&i| self.terminal[i]).collect(),
            ret: self.ret.select(Axis(0), &indices),
            indices,
        }
    }

    /// `size` indices drawn uniformly with replacement.
    pub fn sample(&self, size: usize, rng: &mut Rng) -> TrainingBatch {
        let n = self.len();
        let indices = (0..size).map(|_| rng.gen_range(0..n)).collect();
        self.gather(indices)
    }
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{gen_dataset, Env, EnvId, RefPolicySpec};
    use crate::rng::seeded;

    #[test]
    fn rows_follow_the_dataset() {
        let d = gen_dataset(&Env::new(EnvId::Chain2), &RefPolicySpec::default(), 4, 1).unwrap();
        let flat = FlatDataset::new(&d);
        assert_eq!(flat.len(), 8);
        let b = flat.gather(vec![0, 1, 3]);
        assert_eq!(b.obs.row(0).to_vec(), vec![1.0, 0.0, 0.0]);
        assert_eq!(b.next_act.row(0).to_vec(), d.get(1).act.iter().map(|&v| v as f32).collect::<Vec<_>>());
        assert_eq!(b.next_act.row(1).to_vec(), vec![0.0, 0.0]);
        assert_eq!(b.terminal, vec![false, true, true]);
        assert_eq!(b.ret[0], d.get(0).ret as f32);
    }

    #[test]
    fn sampling_is_seeded() {
        let d = gen_dataset(&Env::new(EnvId::Gridworld5), &RefPolicySpec::default(), 10, 1).unwrap();
        let flat = FlatDataset::new(&d);
        let a = flat.sample(32, &mut seeded(4)).indices;
        let b = flat.sample(32, &mut seeded(4)).indices;
        assert_eq!(a, b);
        assert!(a.iter().all(|&i| i < flat.len()));
    }
}
