use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use evor::critic::QStarEstimator;
use evor::env::gen_dataset;
use evor::harness::ablate::{evaluate_blocks, mean_std, sweep_to_csv};
use evor::harness::oracle_check::dataset_pairs;
use evor::harness::plot::{emit_plots, plot_csv};
use evor::harness::{load_or_generate, oracle_report, run_ablation, run_train, Agent, Checkpoint, ExperimentConfig, SweepAxis};
use evor::rng::{mix_seed, stream};

/// Offline RL with flow policies, flow-TD critics and inference-time
/// extraction, on small deterministic environments.
#[derive(Parser)]
#[command(name = "evor", version)]
struct Cli {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for every file a command writes.
    #[arg(long, global = true, default_value = "evor-out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataFormat {
    Binary,
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured offline dataset.
    GenData {
        #[arg(long, value_enum, default_value = "binary")]
        format: DataFormat,
    },
    /// Train and write checkpoint, metrics and summary.
    Train,
    /// Evaluate a checkpoint under the configured inference parameters.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Sweep one inference parameter over a fixed checkpoint.
    Ablate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// candidates, tau_r or tau_q
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
    },
    /// Compare a checkpoint's critic with exact oracle tables.
    OracleCheck {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Plot a sweep CSV.
    Plot {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Serialize)]
struct EvalRow {
    block: usize,
    episodes: usize,
    mean_return: f64,
    std_return: f64,
    success_rate: f64,
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// The explicit config if given, else the checkpoint's own; then the seed
/// override.
fn inference_config(cli: &Cli, checkpoint: &Checkpoint) -> anyhow::Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => checkpoint.meta.config.clone(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if config.env != checkpoint.meta.config.env {
        bail!("config is for {}, checkpoint for {}", config.env, checkpoint.meta.config.env);
    }
    Ok(config)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let out = &cli.out_dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let base_config = || -> anyhow::Result<ExperimentConfig> {
        let mut config = match &cli.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = cli.seed {
            config.seed = seed;
        }
        config.validate()?;
        Ok(config)
    };
    match &cli.command {
        Command::GenData { format } => {
            let config = base_config()?;
            let env = config.env()?;
            let data = gen_dataset(&env, &config.ref_spec(), config.n_traj, config.data_seed())?;
            let path = match format {
                DataFormat::Binary => {
                    let p = out.join("dataset.bin");
                    data.save(&p)?;
                    p
                }
                DataFormat::Text => {
                    let p = out.join("dataset.txt");
                    write(&p, data.to_text())?;
                    p
                }
            };
            println!("{} trajectories of {} written to {}", data.meta.n_traj, env.id(), path.display());
        }
        Command::Train => {
            let config = base_config()?;
            let run = run_train(&config, out)?;
            for row in &run.rows {
                println!(
                    "step {:>7}  return {:.3} ± {:.3}  success {:.3}{}",
                    row.step,
                    row.eval_mean_return,
                    row.eval_std,
                    row.eval_success_rate,
                    row.q_star_mae.map(|m| format!("  q* mae {m:.4}")).unwrap_or_default()
                );
            }
            println!("checkpoint {} ({})", run.checkpoint.display(), run.digest);
        }
        Command::Eval { checkpoint } => {
            let (ck, digest) = Checkpoint::load(checkpoint)?;
            let config = inference_config(cli, &ck)?;
            let extraction = config.extraction();
            let env = ck.meta.config.env()?;
            let stats = evaluate_blocks(&env, &ck.agent.selector(&extraction), config.eval_episodes, config.eval_seeds, config.seed)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            for (block, s) in stats.iter().enumerate() {
                w.serialize(EvalRow {
                    block,
                    episodes: s.returns.len(),
                    mean_return: s.mean_return,
                    std_return: s.std_return,
                    success_rate: s.success_rate,
                })?;
            }
            write(&out.join("eval.csv"), w.into_inner()?)?;
            let (mean, std) = mean_std(&stats.iter().map(|s| s.mean_return).collect::<Vec<_>>());
            let (success, _) = mean_std(&stats.iter().map(|s| s.success_rate).collect::<Vec<_>>());
            println!("return {mean:.4} ± {std:.4} over {} blocks, success {success:.4}, checkpoint {digest}", stats.len());
        }
        Command::Ablate { checkpoint, axis, values } => {
            let (ck, _) = Checkpoint::load(checkpoint)?;
            let config = inference_config(cli, &ck)?;
            let rows = run_ablation(&ck, &config, *axis, values)?;
            let stem = format!("ablation_{axis}");
            write(&out.join(format!("{stem}.csv")), sweep_to_csv(&rows)?)?;
            let (svg, _) = emit_plots(&rows, out, &stem)?;
            for r in &rows {
                println!("{axis} = {:<8} return {:.4} ± {:.4}  success {:.4}", r.value, r.mean_return, r.std_return, r.success_rate);
            }
            println!("figure {}", svg.display());
        }
        Command::OracleCheck { checkpoint } => {
            let (ck, _) = Checkpoint::load(checkpoint)?;
            let config = inference_config(cli, &ck)?;
            let Agent::Evor { policy, critic } = &ck.agent else {
                bail!("oracle check needs a distributional critic; this checkpoint holds the scalar baseline");
            };
            let env = ck.meta.config.env()?;
            let data = load_or_generate(&ck.meta.config)?;
            let pairs = dataset_pairs(&data, &env, &ck.meta.config.ref_spec(), config.tau_r)?;
            let estimator = QStarEstimator::new(config.tau_r, config.rtg_samples_eval)?;
            let mut rng = stream(mix_seed(config.seed, 0x0c4e_c000), 0);
            let report = oracle_report(policy, critic, &pairs, &env, &estimator, config.bellman_samples, &mut rng)?;
            let path = out.join("oracle_report.json");
            write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
            println!(
                "{} pairs: q* mae {:.4} (max {:.4}, oracle range {:.4}), bellman residual {:.4}; report {}",
                report.pairs,
                report.q_star_mae,
                report.q_star_max_error,
                report.q_star_range,
                report.bellman_residual,
                path.display()
            );
        }
        Command::Plot { input } => {
            let (svg, csv) = plot_csv(input, out)?;
            println!("figure {}, table {}", svg.display(), csv.display());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
