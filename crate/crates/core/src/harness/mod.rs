//! Experiment orchestration behind the command-line tool: configuration,
//! training runs, checkpoints, inference-only sweeps, plots and oracle
//! reports.

pub mod ablate;
pub mod agent;
pub mod config;
pub mod metrics;
pub mod oracle_check;
pub mod plot;
pub mod train;

pub use ablate::{run_ablation, SweepAxis, SweepRow};
pub use agent::{Agent, Checkpoint, CheckpointMeta};
pub use config::{Algorithm, ExperimentConfig};
pub use metrics::{MetricsRow, Summary};
pub use oracle_check::{oracle_report, OracleReport};
pub use train::{load_or_generate, run_train, Trainer};
