//! Training runs: data, the update loop, periodic evaluation and the run
//! directory.
//!
//! Random streams of a run with seed `s`: network initialisation uses
//! `stream(s, 0)`, minibatches and update noise `stream(s, 1)`. The
//! evaluation at step `n` uses episode streams of `mix_seed(s, EVAL + n)` and
//! the oracle comparison `stream(mix_seed(s, MAE + n), 0)`. Nothing else
//! draws, so a `(config, seed)` pair fixes every output byte.

use std::path::{Path, PathBuf};
use std::time::Instant;

use super::agent::{Agent, Checkpoint, CheckpointMeta};
use super::config::{Algorithm, ExperimentConfig};
use super::metrics::{headline, write_metrics, MetricsRow, Summary};
use super::oracle_check::{dataset_pairs, q_star_mae, DatasetPair};
use crate::batch::FlatDataset;
use crate::critic::{QStarEstimator, RtgSource};
use crate::env::{gen_dataset, Env, OfflineDataset};
use crate::error::{Error, Result};
use crate::extraction::{evaluate_policy, EvalStats};
use crate::qc::ChunkDataset;
use crate::rng::{mix_seed, stream, Rng};

const EVAL_SALT: u64 = 0x0e7a_1000_0000;
const MAE_SALT: u64 = 0x0a3e_2000_0000;

/// The configured dataset: loaded from `config.dataset` or generated.
pub fn load_or_generate(config: &ExperimentConfig) -> Result<OfflineDataset> {
    let env = config.env()?;
    let data = match &config.dataset {
        Some(path) => OfflineDataset::load(path)?,
        None => gen_dataset(&env, &config.ref_spec(), config.n_traj, config.data_seed())?,
    };
    if data.meta.env != env.id() {
        return Err(Error::Config(format!("dataset is for {}, config asks for {}", data.meta.env, env.id())));
    }
    if data.meta.gamma != env.gamma() {
        return Err(Error::Config(format!(
            "dataset returns use gamma {}, config uses {}",
            data.meta.gamma,
            env.gamma()
        )));
    }
    Ok(data)
}

enum Samples {
    Flat(FlatDataset),
    Chunks(ChunkDataset),
}

/// Owns one training run in memory.
pub struct Trainer {
    config: ExperimentConfig,
    env: Env,
    agent: Agent,
    samples: Samples,
    pairs: Option<Vec<DatasetPair>>,
    rng: Rng,
    step: usize,
    rows: Vec<MetricsRow>,
    bc_sum: f64,
    td_sum: f64,
    since: usize,
    started: Instant,
}

impl Trainer {
    pub fn new(config: &ExperimentConfig, data: &OfflineDataset) -> Result<Self> {
        config.validate()?;
        let env = config.env()?;
        let agent = Agent::init(config, &env, &mut stream(config.seed, 0))?;
        let samples = match config.algorithm {
            Algorithm::Evor => Samples::Flat(FlatDataset::new(data)),
            Algorithm::Qc => Samples::Chunks(ChunkDataset::new(data, config.qc_chunk, env.gamma())?),
        };
        let pairs = match (config.algorithm, env.as_finite()) {
            (Algorithm::Evor, Some(_)) => Some(dataset_pairs(data, &env, &config.ref_spec(), config.tau_r)?),
            _ => None,
        };
        Ok(Trainer {
            config: config.clone(),
            env,
            agent,
            samples,
            pairs,
            rng: stream(config.seed, 1),
            step: 0,
            rows: Vec::new(),
            bc_sum: 0.0,
            td_sum: 0.0,
            since: 0,
            started: Instant::now(),
        })
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                algorithm: self.config.algorithm,
                steps_trained: self.step,
                config: self.config.clone(),
            },
            agent: self.agent.clone(),
        }
    }

    /// One actor update and one critic update on a shared minibatch.
    pub fn update(&mut self) -> Result<()> {
        let size = self.config.batch_size;
        let (bc, td) = match (&mut self.agent, &self.samples) {
            (Agent::Evor { policy, critic }, Samples::Flat(flat)) => {
                let batch = if critic.config.rtg_source == RtgSource::TargetModel && self.config.rtg_samples_train > 1 {
                    let k = self.config.rtg_samples_train;
                    let base = flat.sample(size, &mut self.rng).indices;
                    flat.gather(base.iter().flat_map(|&i| std::iter::repeat(i).take(k)).collect())
                } else {
                    flat.sample(size, &mut self.rng)
                };
                let bc = policy.bc_update(batch.obs.view(), batch.act.view(), &mut self.rng)?;
                let td = critic.flow_td_update(policy, &batch, &mut self.rng)?;
                (bc, td)
            }
            (Agent::Qc { policy, critic }, Samples::Chunks(chunks)) => {
                let batch = chunks.sample(size, &mut self.rng);
                let bc = policy.bc_update(batch.obs.view(), batch.actions.view(), &mut self.rng)?;
                let td = critic.qc_td_update(policy, &batch, &mut self.rng)?;
                (bc, td)
            }
            _ => unreachable!("samples follow the algorithm"),
        };
        self.step += 1;
        self.bc_sum += bc as f64;
        self.td_sum += td as f64;
        self.since += 1;
        Ok(())
    }

    /// Evaluate the current agent under the configured inference parameters.
    pub fn evaluate(&self) -> Result<EvalStats> {
        let extraction = self.config.extraction();
        let selector = self.agent.selector(&extraction);
        evaluate_policy(
            &self.env,
            &selector,
            self.config.eval_episodes,
            mix_seed(self.config.seed, EVAL_SALT + self.step as u64),
        )
    }

    /// Append a metrics row for the current step.
    pub fn record(&mut self) -> Result<()> {
        let stats = self.evaluate()?;
        let mae = match (&self.agent, &self.pairs) {
            (Agent::Evor { critic, .. }, Some(pairs)) => {
                let est = QStarEstimator::new(self.config.tau_r, self.config.rtg_samples_eval)?;
                let mut rng = stream(mix_seed(self.config.seed, MAE_SALT + self.step as u64), 0);
                Some(q_star_mae(critic, pairs, &est, &mut rng)?)
            }
            _ => None,
        };
        let mean = |sum: f64| (self.since > 0).then(|| sum / self.since as f64);
        self.rows.push(MetricsRow {
            step: self.step,
            bc_loss: mean(self.bc_sum),
            td_loss: mean(self.td_sum),
            eval_mean_return: stats.mean_return,
            eval_success_rate: stats.success_rate,
            eval_std: stats.std_return,
            q_star_mae: mae,
            wall_clock: self.config.record_wall_clock.then(|| self.started.elapsed().as_secs_f64()),
        });
        self.bc_sum = 0.0;
        self.td_sum = 0.0;
        self.since = 0;
        Ok(())
    }

    /// Train for the configured number of steps, recording a row every
    /// `eval_interval` steps and at the final step.
    pub fn run(&mut self) -> Result<()> {
        while self.step < self.config.steps {
            self.update()?;
            if self.step % self.config.eval_interval == 0 || self.step == self.config.steps {
                self.record()?;
            }
        }
        if self.rows.is_empty() {
            self.record()?;
        }
        Ok(())
    }
}

/// Files written by [`run_train`].
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub digest: String,
    pub rows: Vec<MetricsRow>,
}

/// Train from `config` and write `checkpoint.evor`, `metrics.csv`,
/// `summary.json` and `config.toml` to `out_dir`. A failed update still
/// leaves the last good checkpoint and the metrics so far.
pub fn run_train(config: &ExperimentConfig, out_dir: &Path) -> Result<RunOutput> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let config_path = out_dir.join("config.toml");
    std::fs::write(&config_path, config.to_toml()).map_err(|e| Error::io(&config_path, e))?;
    let data = load_or_generate(config)?;
    let mut trainer = Trainer::new(config, &data)?;
    let outcome = trainer.run();
    let checkpoint = out_dir.join("checkpoint.evor");
    let metrics = out_dir.join("metrics.csv");
    let digest = trainer.checkpoint().save(&checkpoint)?;
    write_metrics(&metrics, trainer.rows())?;
    if let Err(e) = outcome {
        return Err(match e {
            Error::Numeric(m) => Error::Numeric(format!(
                "{m}; training stopped at step {}, last good checkpoint in {}",
                trainer.step_count(),
                checkpoint.display()
            )),
            other => other,
        });
    }
    let (ret, success) = headline(trainer.rows()).expect("at least one row");
    let summary = Summary {
        algorithm: config.algorithm.name().into(),
        env: config.env.to_string(),
        seed: config.seed,
        steps: config.steps,
        budget: format!("desk-scale: {} gradient steps", config.steps),
        headline_mean_return: ret,
        headline_success_rate: success,
        eval_rows: trainer.rows().len(),
        checkpoint_digest: digest.clone(),
    };
    let summary_path = out_dir.join("summary.json");
    let json = serde_json::to_string_pretty(&summary).expect("summary serialises");
    std::fs::write(&summary_path, json + "\n").map_err(|e| Error::io(&summary_path, e))?;
    Ok(RunOutput {
        checkpoint,
        metrics,
        summary: summary_path,
        digest,
        rows: trainer.rows().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvId;

    fn tiny(algorithm: Algorithm) -> ExperimentConfig {
        ExperimentConfig {
            env: EnvId::Chain2,
            algorithm,
            n_traj: 50,
            hidden: vec![16],
            batch_size: 32,
            steps: 30,
            eval_interval: 10,
            eval_episodes: 4,
            candidates: 4,
            rtg_samples_eval: 8,
            qc_bootstrap_candidates: 4,
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_keep_the_initialisation() {
        let config = ExperimentConfig { steps: 0, ..tiny(Algorithm::Evor) };
        let data = load_or_generate(&config).unwrap();
        let mut t = Trainer::new(&config, &data).unwrap();
        let init = Agent::init(&config, &config.env().unwrap(), &mut stream(config.seed, 0)).unwrap();
        t.run().unwrap();
        assert_eq!(t.rows().len(), 1);
        assert_eq!(t.rows()[0].bc_loss, None);
        let fresh = Checkpoint {
            agent: init,
            ..t.checkpoint()
        };
        assert_eq!(t.checkpoint().digest(), fresh.digest());
    }

    #[test]
    fn rows_follow_the_eval_interval() {
        for algorithm in [Algorithm::Evor, Algorithm::Qc] {
            let config = ExperimentConfig { steps: 25, ..tiny(algorithm) };
            let data = load_or_generate(&config).unwrap();
            let mut t = Trainer::new(&config, &data).unwrap();
            t.run().unwrap();
            let steps: Vec<usize> = t.rows().iter().map(|r| r.step).collect();
            assert_eq!(steps, vec![10, 20, 25]);
            let has_mae = t.rows().iter().all(|r| r.q_star_mae.is_some());
            assert_eq!(has_mae, algorithm == Algorithm::Evor);
            assert!(t.rows().iter().all(|r| r.wall_clock.is_none() && r.td_loss.is_some()));
        }
    }

    #[test]
    fn runs_are_reproducible_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny(Algorithm::Evor);
        let a = run_train(&config, &dir.path().join("a")).unwrap();
        let b = run_train(&config, &dir.path().join("b")).unwrap();
        assert_eq!(std::fs::read(&a.metrics).unwrap(), std::fs::read(&b.metrics).unwrap());
        assert_eq!(std::fs::read(&a.summary).unwrap(), std::fs::read(&b.summary).unwrap());
        assert_eq!(a.digest, b.digest);
    }

    #[test]
    fn mismatched_dataset_discount_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let env = Env::new(EnvId::Chain2);
        gen_dataset(&env, &Default::default(), 5, 0).unwrap().save(&path).unwrap();
        let config = ExperimentConfig {
            dataset: Some(path),
            gamma: Some(0.5),
            ..tiny(Algorithm::Evor)
        };
        assert!(matches!(load_or_generate(&config), Err(Error::Config(_))));
    }
}
