//! Trained agents and their single-file checkpoint bundle.
//!
//! ```text
//! magic     8 bytes  "EVORCKPT"
//! version   u32 LE   1
//! meta_len  u32 LE
//! meta      JSON     CheckpointMeta
//! n_blocks  u32 LE
//! blocks    n_blocks x (u32 LE name length, UTF-8 name, network block)
//! digest    32 bytes SHA-256 of every preceding byte
//! ```
//!
//! Network blocks use the layout of `nn::write_mlp`. Optimiser moments are
//! not stored: a bundle is an inference snapshot.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{Algorithm, ExperimentConfig};
use crate::critic::RewardToGoCritic;
use crate::env::{Action, Env, State};
use crate::error::{Error, Result};
use crate::extraction::{extract_action, ActionSelector, ExtractionConfig};
use crate::flow::ConditionalFlowModel;
use crate::nn::{read_block, write_mlp, Cursor, Mlp};
use crate::policy::BasePolicy;
use crate::qc::{qc_select_action, ScalarCritic, ENSEMBLE};
use crate::rng::Rng;

const MAGIC: &[u8; 8] = b"EVORCKPT";
const VERSION: u32 = 1;

/// A base policy with the critic of its algorithm.
#[derive(Clone, Debug)]
pub enum Agent {
    Evor { policy: BasePolicy, critic: RewardToGoCritic },
    Qc { policy: BasePolicy, critic: ScalarCritic },
}

impl Agent {
    /// Freshly initialised networks for `config`: the policy first, then the
    /// critic, from one stream.
    pub fn init(config: &ExperimentConfig, env: &Env, rng: &mut Rng) -> Result<Self> {
        let net = config.flow_net();
        let space = env.action_space();
        Ok(match config.algorithm {
            Algorithm::Evor => {
                let policy = BasePolicy::new(env.obs_dim(), space, &net, config.euler_steps, config.adam(), rng)?;
                let critic = RewardToGoCritic::new(env.obs_dim(), env.act_dim(), &net, config.critic()?, config.adam(), rng)?;
                Agent::Evor { policy, critic }
            }
            Algorithm::Qc => {
                let k = config.qc_chunk;
                let policy = BasePolicy::new_chunked(env.obs_dim(), space, k, &net, config.euler_steps, config.adam(), rng)?;
                let critic = ScalarCritic::new(env.obs_dim(), k * env.act_dim(), config.qc()?, config.adam(), rng)?;
                Agent::Qc { policy, critic }
            }
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        match self {
            Agent::Evor { .. } => Algorithm::Evor,
            Agent::Qc { .. } => Algorithm::Qc,
        }
    }

    pub fn policy(&self) -> &BasePolicy {
        match self {
            Agent::Evor { policy, .. } | Agent::Qc { policy, .. } => policy,
        }
    }

    /// Named networks in bundle order.
    fn blocks(&self) -> Vec<(&'static str, &Mlp<f32>)> {
        match self {
            Agent::Evor { policy, critic } => vec![
                ("policy", &policy.flow.net),
                ("critic", &critic.online.net),
                ("critic_target", &critic.target.net),
            ],
            Agent::Qc { policy, critic } => vec![
                ("policy", &policy.flow.net),
                ("q0", &critic.members[0]),
                ("q1", &critic.members[1]),
                ("q0_target", &critic.targets[0]),
                ("q1_target", &critic.targets[1]),
            ],
        }
    }

    /// Actions to execute from observation `obs`: one for EVOR, a chunk for
    /// QC.
    pub fn plan(&self, obs: &[f64], extraction: &ExtractionConfig, rng: &mut Rng) -> Result<Vec<Action>> {
        match self {
            Agent::Evor { policy, critic } => Ok(vec![extract_action(policy, critic, obs, extraction, rng)?]),
            Agent::Qc { policy, critic } => qc_select_action(policy, critic, obs, extraction.candidates, rng),
        }
    }

    /// Extraction with `extraction` for EVOR, argmax chunk selection over
    /// `extraction.candidates` for QC.
    pub fn selector<'a>(&'a self, extraction: &'a ExtractionConfig) -> AgentSelector<'a> {
        AgentSelector { agent: self, extraction }
    }
}

/// An agent acting under fixed inference parameters.
#[derive(Clone, Copy)]
pub struct AgentSelector<'a> {
    agent: &'a Agent,
    extraction: &'a ExtractionConfig,
}

impl ActionSelector for AgentSelector<'_> {
    fn plan(&self, _state: &State, obs: &[f64], rng: &mut Rng) -> Result<Vec<Action>> {
        self.agent.plan(obs, self.extraction, rng)
    }
}

/// Bundle metadata; the configuration fixes every architectural choice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub algorithm: Algorithm,
    pub steps_trained: usize,
    pub config: ExperimentConfig,
}

/// An agent together with the configuration it was built from.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub agent: Agent,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta).expect("metadata serialises");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        let blocks = self.agent.blocks();
        out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
        for (name, net) in blocks {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            write_mlp(net, &mut out);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < MAGIC.len() + 32 {
            return Err(Error::format("agent checkpoint", "file too short"));
        }
        let (body, stored) = buf.split_at(buf.len() - 32);
        if Sha256::digest(body).as_slice() != stored {
            return Err(Error::format("agent checkpoint", "digest mismatch"));
        }
        let mut cur = Cursor::new(body, "agent checkpoint");
        if cur.take(8)? != MAGIC {
            return Err(Error::format("agent checkpoint", "bad magic"));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::format("agent checkpoint", format!("unsupported version {version}")));
        }
        let meta_len = cur.u32()? as usize;
        let meta: CheckpointMeta =
            serde_json::from_slice(cur.take(meta_len)?).map_err(|e| Error::format("agent checkpoint", e.to_string()))?;
        meta.config.validate()?;
        let n = cur.u32()? as usize;
        let mut nets = Vec::with_capacity(n.min(16));
        for _ in 0..n {
            let len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::format("agent checkpoint", "block name is not UTF-8"))?
                .to_owned();
            nets.push((name, read_block::<f32>(&mut cur)?));
        }
        if cur.remaining() != 0 {
            return Err(Error::format("agent checkpoint", "trailing bytes"));
        }
        let agent = assemble(&meta, nets)?;
        Ok(Checkpoint { meta, agent })
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes();
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(digest_hex(&bytes))
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok((Self::from_bytes(&bytes)?, digest_hex(&bytes)))
    }

    /// Hex SHA-256 of the serialised bundle.
    pub fn digest(&self) -> String {
        digest_hex(&self.to_bytes())
    }
}

pub fn digest_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn assemble(meta: &CheckpointMeta, nets: Vec<(String, Mlp<f32>)>) -> Result<Agent> {
    let config = &meta.config;
    let env = config.env()?;
    let expected: &[&str] = match meta.algorithm {
        Algorithm::Evor => &["policy", "critic", "critic_target"],
        Algorithm::Qc => &["policy", "q0", "q1", "q0_target", "q1_target"],
    };
    let names: Vec<&str> = nets.iter().map(|(n, _)| n.as_str()).collect();
    if names != expected || meta.algorithm != config.algorithm {
        return Err(Error::format(
            "agent checkpoint",
            format!("blocks {names:?} do not match algorithm {}", meta.algorithm.name()),
        ));
    }
    let mut nets = nets.into_iter().map(|(_, n)| n);
    let mut next = || nets.next().expect("count checked");
    let time = config.time_encoding;
    let chunk = match meta.algorithm {
        Algorithm::Evor => 1,
        Algorithm::Qc => config.qc_chunk,
    };
    let flow = ConditionalFlowModel::from_net(next(), chunk * env.act_dim(), env.obs_dim(), time)?;
    let policy = BasePolicy::from_flow(flow, env.action_space(), config.euler_steps, config.adam())?;
    Ok(match meta.algorithm {
        Algorithm::Evor => {
            let cond = env.obs_dim() + env.act_dim();
            let online = ConditionalFlowModel::from_net(next(), 1, cond, time)?;
            let target = ConditionalFlowModel::from_net(next(), 1, cond, time)?;
            let critic = RewardToGoCritic::from_parts(online, target, config.critic()?, config.adam())?;
            Agent::Evor { policy, critic }
        }
        Algorithm::Qc => {
            let members: Vec<_> = (0..ENSEMBLE).map(|_| next()).collect();
            let targets: Vec<_> = (0..ENSEMBLE).map(|_| next()).collect();
            let input = members[0].input_dim();
            if input != env.obs_dim() + chunk * env.act_dim() {
                return Err(Error::format("agent checkpoint", format!("critic input width {input}")));
            }
            let critic = ScalarCritic::from_members(members, targets, config.qc()?, config.adam())?;
            Agent::Qc { policy, critic }
        }
    })
}
