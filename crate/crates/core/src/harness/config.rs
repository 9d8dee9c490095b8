//! Flat TOML experiment configuration. Every key is optional; unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::critic::{CriticConfig, NextActionSource, RtgSource, TdTarget};
use crate::env::{Env, EnvId, RefPolicySpec};
use crate::error::{Error, Result};
use crate::extraction::{ExtractionConfig, Selection};
use crate::flow::{FlowNetConfig, TimeEncoding};
use crate::nn::{Activation, AdamConfig};
use crate::qc::QcConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Evor,
    Qc,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Evor => "evor",
            Algorithm::Qc => "qc",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub env: EnvId,
    /// Dataset file to train on; generated from the fields below when unset.
    pub dataset: Option<PathBuf>,
    pub n_traj: usize,
    pub optimal_weight: f64,
    pub detour_weight: f64,
    /// Dataset seed; defaults to `seed`.
    pub data_seed: Option<u64>,
    pub algorithm: Algorithm,

    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub layer_norm: bool,
    pub time_encoding: TimeEncoding,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Discount; the environment default when unset.
    pub gamma: Option<f64>,
    pub polyak: f64,
    pub euler_steps: usize,

    pub candidates: usize,
    /// Target-model return draws per sampled transition.
    pub rtg_samples_train: usize,
    pub rtg_samples_eval: usize,
    pub tau_r: f64,
    pub tau_q: f64,
    pub selection: Selection,
    pub rtg_source: RtgSource,
    pub td_target: TdTarget,
    pub next_action: NextActionSource,
    pub next_action_samples: usize,
    pub t_clamp: f64,
    pub return_scale: f64,

    pub qc_chunk: usize,
    pub qc_bootstrap_candidates: usize,

    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Independent evaluation blocks for `eval` and `ablate`.
    pub eval_seeds: usize,
    /// Samples per mean in the Bellman residual of the oracle report.
    pub bellman_samples: usize,
    pub record_wall_clock: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            env: EnvId::Gridworld5,
            dataset: None,
            n_traj: 1000,
            optimal_weight: 0.5,
            detour_weight: 0.5,
            data_seed: None,
            algorithm: Algorithm::Evor,
            hidden: vec![64, 64],
            activation: Activation::Gelu,
            layer_norm: false,
            time_encoding: TimeEncoding::Scalar,
            lr: 3e-4,
            batch_size: 256,
            steps: 50_000,
            gamma: None,
            polyak: 5e-3,
            euler_steps: 10,
            candidates: 32,
            rtg_samples_train: 1,
            rtg_samples_eval: 50,
            tau_r: 1.0,
            tau_q: 1e-3,
            selection: Selection::Softmax,
            rtg_source: RtgSource::Dataset,
            td_target: TdTarget::Translated,
            next_action: NextActionSource::Dataset,
            next_action_samples: 1,
            t_clamp: 0.99,
            return_scale: 1.0,
            qc_chunk: 1,
            qc_bootstrap_candidates: 32,
            eval_interval: 10_000,
            eval_episodes: 50,
            eval_seeds: 5,
            bellman_samples: 1000,
            record_wall_clock: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_traj == 0 || self.batch_size == 0 {
            return bad("n_traj and batch_size must be positive".into());
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return bad("hidden widths must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 || self.eval_seeds == 0 {
            return bad("eval_interval, eval_episodes and eval_seeds must be positive".into());
        }
        if self.rtg_samples_train == 0 || self.bellman_samples == 0 {
            return bad("sample counts must be positive".into());
        }
        self.ref_spec().validate()?;
        self.env()?;
        self.critic()?.validate()?;
        self.extraction().validate()?;
        self.qc()?.validate()
    }

    pub fn env(&self) -> Result<Env> {
        let env = Env::new(self.env);
        match self.gamma {
            Some(g) => env.with_gamma(g),
            None => Ok(env),
        }
    }

    pub fn gamma(&self) -> Result<f64> {
        Ok(self.env()?.gamma())
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    pub fn ref_spec(&self) -> RefPolicySpec {
        RefPolicySpec {
            optimal_weight: self.optimal_weight,
            detour_weight: self.detour_weight,
        }
    }

    pub fn flow_net(&self) -> FlowNetConfig {
        FlowNetConfig {
            hidden: self.hidden.clone(),
            activation: self.activation,
            layer_norm: self.layer_norm,
            time: self.time_encoding,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..Default::default()
        }
    }

    pub fn critic(&self) -> Result<CriticConfig> {
        Ok(CriticConfig {
            gamma: self.gamma()?,
            polyak: self.polyak,
            euler_steps: self.euler_steps,
            td_target: self.td_target,
            next_action: self.next_action,
            next_action_samples: self.next_action_samples,
            rtg_source: self.rtg_source,
            t_clamp: self.t_clamp,
            return_scale: self.return_scale,
        })
    }

    pub fn extraction(&self) -> ExtractionConfig {
        ExtractionConfig {
            candidates: self.candidates,
            rtg_samples: self.rtg_samples_eval,
            tau_r: self.tau_r,
            tau_q: self.tau_q,
            euler_steps: self.euler_steps,
            selection: self.selection,
        }
    }

    pub fn qc(&self) -> Result<QcConfig> {
        Ok(QcConfig {
            chunk: self.qc_chunk,
            gamma: self.gamma()?,
            polyak: self.polyak,
            bootstrap_candidates: self.qc_bootstrap_candidates,
            hidden: self.hidden.clone(),
            activation: self.activation,
        })
    }
}
