//! Offline datasets: generation under a reference policy, return
//! annotation, and binary / text serialisation.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! magic    8 bytes "EVORDATA"
//! version  u32     1
//! env      u32     0 chain2, 1 gridworld5, 2 bimodal-bandit, 3 pointmass-maze
//! horizon  u32
//! gamma    f64
//! seed     u64
//! obs_dim  u32
//! act_dim  u32
//! n_traj   u32
//! records  n_traj * horizon records of f64, trajectory-major:
//!          step, state_id, action_id, obs[obs_dim], act[act_dim],
//!          reward, next_obs[obs_dim], terminal, ret
//! ```
//!
//! `state_id` / `action_id` are `-1` for continuous spaces. The text export
//! writes one header line and then one whitespace-separated line per record,
//! prefixed by the trajectory index.

use std::fmt::Write as _;
use std::path::Path;

use super::{Action, Env, EnvId, RefPolicySpec, State};
use crate::error::{Error, Result};
use crate::nn::Cursor;
use crate::rng::{seeded, Rng};

const MAGIC: &[u8; 8] = b"EVORDATA";
const VERSION: u32 = 1;
const TEXT_TAG: &str = "# evor-dataset v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub step: usize,
    pub state: State,
    pub obs: Vec<f64>,
    pub action: Action,
    /// Embedded action vector.
    pub act: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// Set exactly on the last step of the horizon.
    pub terminal: bool,
    /// Discounted return from this step to the end of its trajectory.
    pub ret: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub env: EnvId,
    pub horizon: usize,
    pub gamma: f64,
    pub seed: u64,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub n_traj: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub meta: DatasetMeta,
    pub trajectories: Vec<Vec<Transition>>,
}

/// Roll out `n_traj` full-horizon episodes of the reference policy and
/// annotate discounted returns with the environment's discount.
pub fn gen_dataset(env: &Env, spec: &RefPolicySpec, n_traj: usize, seed: u64) -> Result<OfflineDataset> {
    if n_traj == 0 {
        return Err(Error::InputDomain("a dataset needs at least one trajectory".into()));
    }
    let policy = env.ref_policy(spec)?;
    let space = env.action_space();
    let mut rng: Rng = seeded(seed);
    let mut trajectories = Vec::with_capacity(n_traj);
    for _ in 0..n_traj {
        let mut state = env.reset();
        let mut traj = Vec::with_capacity(env.horizon());
        for h in 0..env.horizon() {
            let action = policy.sample(env, &state, &mut rng)?;
            let out = env.step(&state, &action)?;
            let obs = env.observe(&state);
            let next_obs = env.observe(&out.next);
            traj.push(Transition {
                step: h,
                act: space.embed(&action)?,
                state,
                obs,
                action,
                reward: out.reward,
                next_obs,
                terminal: out.terminal,
                ret: 0.0,
            });
            state = out.next;
        }
        fill_returns(&mut traj, env.gamma());
        trajectories.push(traj);
    }
    Ok(OfflineDataset {
        meta: DatasetMeta {
            env: env.id(),
            horizon: env.horizon(),
            gamma: env.gamma(),
            seed,
            obs_dim: env.obs_dim(),
            act_dim: env.act_dim(),
            n_traj,
        },
        trajectories,
    })
}

fn fill_returns(traj: &mut [Transition], gamma: f64) {
    let mut acc = 0.0;
    for t in traj.iter_mut().rev() {
        acc = t.reward + gamma * acc;
        t.ret = acc;
    }
}

/// Recompute every `ret` as the discounted sum of the trajectory's rewards
/// from that step on. `gamma` must match the dataset's metadata.
pub fn annotate_returns(dataset: &OfflineDataset, gamma: f64) -> Result<OfflineDataset> {
    if gamma != dataset.meta.gamma {
        return Err(Error::Config(format!(
            "annotating with discount {gamma} but the dataset was built with {}",
            dataset.meta.gamma
        )));
    }
    let mut out = dataset.clone();
    for traj in &mut out.trajectories {
        if traj.len() != out.meta.horizon || !traj.last().is_some_and(|t| t.terminal) {
            return Err(Error::InputDomain("incomplete trajectory".into()));
        }
        fill_returns(traj, gamma);
    }
    Ok(out)
}

impl OfflineDataset {
    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.trajectories.len() * self.meta.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Transition by flat index (trajectory-major).
    pub fn get(&self, i: usize) -> &Transition {
        let h = self.meta.horizon;
        &self.trajectories[i / h][i % h]
    }

    /// The transition `k` steps after flat index `i` in the same trajectory.
    pub fn ahead(&self, i: usize, k: usize) -> Option<&Transition> {
        let h = self.meta.horizon;
        let step = i % h + k;
        (step < h).then(|| &self.trajectories[i / h][step])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.trajectories.iter().flatten()
    }

    pub fn env(&self) -> Result<Env> {
        Env::new(self.meta.env).with_gamma(self.meta.gamma)
    }

    fn record_width(&self) -> usize {
        6 + 2 * self.meta.obs_dim + self.meta.act_dim
    }

    fn record(t: &Transition) -> Vec<f64> {
        let id = |o: Option<usize>| o.map_or(-1.0, |v| v as f64);
        let mut r = vec![t.step as f64, id(t.state.index()), id(t.action.index())];
        r.extend(&t.obs);
        r.extend(&t.act);
        r.push(t.reward);
        r.extend(&t.next_obs);
        r.push(if t.terminal { 1.0 } else { 0.0 });
        r.push(t.ret);
        r
    }

    fn from_record(env: &Env, meta: &DatasetMeta, r: &[f64]) -> Result<Transition> {
        let (o, a) = (meta.obs_dim, meta.act_dim);
        let id = |v: f64| -> Result<Option<usize>> {
            if v == -1.0 {
                Ok(None)
            } else if v >= 0.0 && v.fract() == 0.0 {
                Ok(Some(v as usize))
            } else {
                Err(Error::format("dataset", format!("bad index field {v}")))
            }
        };
        let step = id(r[0])?.ok_or_else(|| Error::format("dataset", "missing step"))?;
        let obs = r[3..3 + o].to_vec();
        let act = r[3 + o..3 + o + a].to_vec();
        let state = env.state_from_record(step, id(r[1])?, &obs)?;
        let action = match id(r[2])? {
            Some(i) => Action::Discrete(i),
            None => Action::Continuous(act.clone()),
        };
        let tail = &r[3 + o + a..];
        Ok(Transition {
            step,
            state,
            obs,
            action,
            act,
            reward: tail[0],
            next_obs: tail[1..1 + o].to_vec(),
            terminal: tail[1 + o] == 1.0,
            ret: tail[2 + o],
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.meta;
        let mut out = Vec::with_capacity(48 + self.len() * self.record_width() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&m.env.code().to_le_bytes());
        out.extend_from_slice(&(m.horizon as u32).to_le_bytes());
        out.extend_from_slice(&m.gamma.to_le_bytes());
        out.extend_from_slice(&m.seed.to_le_bytes());
        for v in [m.obs_dim, m.act_dim, m.n_traj] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for t in self.iter() {
            for v in Self::record(t) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(buf, "dataset");
        if cur.take(8)? != MAGIC {
            return Err(Error::format("dataset", "bad magic"));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::format("dataset", format!("unsupported version {version}")));
        }
        let code = cur.u32()?;
        let env_id = EnvId::from_code(code).ok_or_else(|| Error::format("dataset", format!("unknown env code {code}")))?;
        let horizon = cur.u32()? as usize;
        let gamma = cur.f64()?;
        let seed = cur.u64()?;
        let meta = DatasetMeta {
            env: env_id,
            horizon,
            gamma,
            seed,
            obs_dim: cur.u32()? as usize,
            act_dim: cur.u32()? as usize,
            n_traj: cur.u32()? as usize,
        };
        let env = Env::new(env_id).with_gamma(gamma)?;
        if env.horizon() != horizon || env.obs_dim() != meta.obs_dim || env.act_dim() != meta.act_dim {
            return Err(Error::format("dataset", format!("header {meta:?} does not describe {env_id}")));
        }
        let width = 6 + 2 * meta.obs_dim + meta.act_dim;
        let mut record = vec![0.0; width];
        let mut trajectories = Vec::with_capacity(meta.n_traj);
        for _ in 0..meta.n_traj {
            let mut traj = Vec::with_capacity(horizon);
            for _ in 0..horizon {
                for v in record.iter_mut() {
                    *v = cur.f64()?;
                }
                traj.push(Self::from_record(&env, &meta, &record)?);
            }
            trajectories.push(traj);
        }
        if cur.remaining() != 0 {
            return Err(Error::format("dataset", format!("{} trailing bytes", cur.remaining())));
        }
        Ok(OfflineDataset { meta, trajectories })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_text(&self) -> String {
        let m = &self.meta;
        let mut s = format!(
            "{TEXT_TAG} env={} horizon={} gamma={} seed={} obs_dim={} act_dim={} n_traj={}\n",
            m.env, m.horizon, m.gamma, m.seed, m.obs_dim, m.act_dim, m.n_traj
        );
        for (k, traj) in self.trajectories.iter().enumerate() {
            for t in traj {
                write!(s, "{k}").unwrap();
                for v in Self::record(t) {
                    write!(s, " {v}").unwrap();
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|l| l.strip_prefix(TEXT_TAG))
            .ok_or_else(|| Error::format("dataset text", "missing header"))?;
        let field = |key: &str| -> Result<&str> {
            header
                .split_whitespace()
                .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| Error::format("dataset text", format!("header lacks `{key}`")))
        };
        let num = |key: &str| -> Result<usize> {
            field(key)?
                .parse()
                .map_err(|_| Error::format("dataset text", format!("bad `{key}`")))
        };
        let env_id: EnvId = field("env")?.parse()?;
        let meta = DatasetMeta {
            env: env_id,
            horizon: num("horizon")?,
            gamma: field("gamma")?
                .parse()
                .map_err(|_| Error::format("dataset text", "bad `gamma`"))?,
            seed: field("seed")?
                .parse()
                .map_err(|_| Error::format("dataset text", "bad `seed`"))?,
            obs_dim: num("obs_dim")?,
            act_dim: num("act_dim")?,
            n_traj: num("n_traj")?,
        };
        let env = Env::new(env_id).with_gamma(meta.gamma)?;
        let mut trajectories: Vec<Vec<Transition>> = vec![Vec::new(); meta.n_traj];
        for line in lines {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| Error::format("dataset text", format!("bad number `{v}`"))))
                .collect::<Result<_>>()?;
            if vals.len() != 7 + 2 * meta.obs_dim + meta.act_dim {
                return Err(Error::format("dataset text", format!("record of width {}", vals.len())));
            }
            let k = vals[0] as usize;
            let traj = trajectories
                .get_mut(k)
                .ok_or_else(|| Error::format("dataset text", format!("trajectory {k} out of range")))?;
            traj.push(Self::from_record(&env, &meta, &vals[1..])?);
        }
        if trajectories.iter().any(|t| t.len() != meta.horizon) {
            return Err(Error::format("dataset text", "trajectory with the wrong length"));
        }
        Ok(OfflineDataset { meta, trajectories })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Env;

    fn chain(n: usize, seed: u64) -> OfflineDataset {
        gen_dataset(&Env::new(EnvId::Chain2), &RefPolicySpec::default(), n, seed).unwrap()
    }

    #[test]
    fn chain2_uniform_reference_frequency_at_s0() {
        let d = chain(1000, 7);
        let a0 = d.trajectories.iter().filter(|t| t[0].action == Action::Discrete(0)).count();
        let freq = a0 as f64 / 1000.0;
        assert!((0.47..=0.53).contains(&freq), "a0 frequency {freq}");
    }

    #[test]
    fn single_trajectory_spans_the_horizon() {
        let d = chain(1, 0);
        assert_eq!(d.trajectories.len(), 1);
        assert_eq!(d.trajectories[0].len(), 2);
        assert!(d.trajectories[0][1].terminal && !d.trajectories[0][0].terminal);
    }

    #[test]
    fn same_seed_same_bytes() {
        for id in EnvId::ALL {
            let env = Env::new(id);
            let a = gen_dataset(&env, &RefPolicySpec::default(), 20, 11).unwrap();
            let b = gen_dataset(&env, &RefPolicySpec::default(), 20, 11).unwrap();
            assert_eq!(a.to_bytes(), b.to_bytes());
        }
    }

    #[test]
    fn rejects_empty_request() {
        assert!(gen_dataset(&Env::new(EnvId::Chain2), &RefPolicySpec::default(), 0, 0).is_err());
    }

    #[test]
    fn chain2_returns_count_remaining_a0() {
        let d = chain(50, 1);
        for t in &d.trajectories {
            let all_a0 = t.iter().all(|x| x.action == Action::Discrete(0));
            if all_a0 {
                assert_eq!(t[0].ret, 2.0);
            }
            assert_eq!(t[1].ret, t[1].reward);
            assert_eq!(t[0].ret, t[0].reward + t[1].reward);
        }
    }

    #[test]
    fn zero_discount_returns_are_immediate_rewards() {
        let env = Env::new(EnvId::Gridworld5).with_gamma(0.0).unwrap();
        let d = gen_dataset(&env, &RefPolicySpec::default(), 30, 2).unwrap();
        let d = annotate_returns(&d, 0.0).unwrap();
        assert!(d.iter().all(|t| t.ret == t.reward));
    }

    #[test]
    fn discount_mismatch_is_a_config_error() {
        let d = chain(3, 0);
        assert!(matches!(annotate_returns(&d, 0.9), Err(Error::Config(_))));
    }

    #[test]
    fn gridworld_return_matches_a_forward_recomputation() {
        let d = gen_dataset(&Env::new(EnvId::Gridworld5), &RefPolicySpec::default(), 200, 5).unwrap();
        let traj = d
            .trajectories
            .iter()
            .find(|t| t.iter().any(|x| x.reward > 0.0))
            .expect("some trajectory reaches the goal");
        for h in 0..traj.len() {
            let forward: f64 = traj[h..]
                .iter()
                .enumerate()
                .map(|(k, t)| 0.99f64.powi(k as i32) * t.reward)
                .sum();
            assert!((traj[h].ret - forward).abs() < 1e-12);
        }
    }

    #[test]
    fn binary_round_trip() {
        for id in EnvId::ALL {
            let d = gen_dataset(&Env::new(id), &RefPolicySpec::default(), 5, 3).unwrap();
            let back = OfflineDataset::from_bytes(&d.to_bytes()).unwrap();
            assert_eq!(back, d);
        }
    }

    #[test]
    fn text_round_trip() {
        for id in EnvId::ALL {
            let d = gen_dataset(&Env::new(id), &RefPolicySpec::default(), 4, 9).unwrap();
            assert_eq!(OfflineDataset::from_text(&d.to_text()).unwrap(), d);
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = chain(2, 0).to_bytes();
        assert!(OfflineDataset::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(OfflineDataset::from_bytes(b"NOTADATA").is_err());
    }

    #[test]
    fn lookahead_stays_within_a_trajectory() {
        let d = chain(3, 0);
        assert_eq!(d.ahead(0, 1), Some(&d.trajectories[0][1]));
        assert_eq!(d.ahead(1, 1), None);
        assert_eq!(d.get(3), &d.trajectories[1][1]);
    }
}
