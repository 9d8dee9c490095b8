//! End-to-end runs of the `evor` binary on small configurations.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
env = "chain2"
hidden = [16, 16]
batch_size = 64
steps = 200
eval_interval = 100
eval_episodes = 4
eval_seeds = 2
candidates = 4
rtg_samples_eval = 8
bellman_samples = 50
n_traj = 200
"#;

fn evor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evor")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = evor(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn train_eval_and_ablate_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "small.toml", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["--config", s(&config), "--seed", "3", "--out-dir", s(out), "train"]);
    }
    for file in ["metrics.csv", "checkpoint.evor", "summary.json", "config.toml"] {
        assert_eq!(read(a.join(file)), read(b.join(file)), "{file} differs");
    }
    let metrics = String::from_utf8(read(a.join("metrics.csv"))).unwrap();
    let steps: Vec<&str> = metrics.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, ["100", "200"]);
    assert!(metrics.starts_with("step,bc_loss,td_loss,eval_mean_return,eval_success_rate,eval_std,q_star_mae,wall_clock\n"));

    let ck = a.join("checkpoint.evor");
    let (e1, e2) = (dir.path().join("e1"), dir.path().join("e2"));
    for out in [&e1, &e2] {
        ok(&["--out-dir", s(out), "eval", "--checkpoint", s(&ck)]);
        ok(&["--out-dir", s(out), "ablate", "--checkpoint", s(&ck), "--axis", "tau_q", "--values", "0.001,1,10"]);
    }
    for file in ["eval.csv", "ablation_tau_q.csv", "ablation_tau_q.svg"] {
        assert_eq!(read(e1.join(file)), read(e2.join(file)), "{file} differs");
    }
    let sweep = String::from_utf8(read(e1.join("ablation_tau_q.csv"))).unwrap();
    assert_eq!(sweep.lines().count(), 4);
    let digests: Vec<&str> = sweep.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert!(digests.iter().all(|d| *d == digests[0] && d.len() == 64));

    // Re-plotting the emitted table reproduces the figure.
    let replot = dir.path().join("replot");
    ok(&["--out-dir", s(&replot), "plot", "--input", s(&e1.join("ablation_tau_q.csv"))]);
    assert_eq!(read(replot.join("ablation_tau_q.svg")), read(e1.join("ablation_tau_q.svg")));

    // A different seed changes the run.
    let c = dir.path().join("c");
    ok(&["--config", s(&config), "--seed", "4", "--out-dir", s(&c), "train"]);
    assert_ne!(read(a.join("checkpoint.evor")), read(c.join("checkpoint.evor")));
}

#[test]
fn oracle_check_reports_on_an_untrained_critic() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "zero.toml", &format!("{SMALL}\n").replace("steps = 200", "steps = 0"));
    let run = dir.path().join("run");
    ok(&["--config", s(&config), "--out-dir", s(&run), "train"]);
    let ck = run.join("checkpoint.evor");
    let stdout = ok(&["--out-dir", s(&run), "oracle-check", "--checkpoint", s(&ck)]);
    assert!(stdout.contains("q* mae"));
    let first = read(run.join("oracle_report.json"));
    let report: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert!(report["q_star_mae"].as_f64().unwrap() > 0.3);
    assert_eq!(report["pairs"].as_u64().unwrap(), 4);
    ok(&["--out-dir", s(&run), "oracle-check", "--checkpoint", s(&ck)]);
    assert_eq!(read(run.join("oracle_report.json")), first);
}

#[test]
fn gen_data_formats_describe_the_same_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "grid.toml", "env = \"gridworld5\"\nn_traj = 50\n");
    ok(&["--config", s(&config), "--out-dir", s(dir.path()), "gen-data"]);
    ok(&["--config", s(&config), "--out-dir", s(dir.path()), "gen-data", "--format", "text"]);
    let bin = evor::env::OfflineDataset::load(&dir.path().join("dataset.bin")).unwrap();
    let text = std::fs::read_to_string(dir.path().join("dataset.txt")).unwrap();
    assert_eq!(evor::env::OfflineDataset::from_text(&text).unwrap(), bin);
    assert_eq!(bin.meta.n_traj, 50);
}

#[test]
fn bad_inputs_exit_with_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(dir.path(), "unknown.toml", "env = \"chain2\"\nlearning_rate = 0.1\n");
    let out = evor(&["--config", s(&unknown), "--out-dir", s(dir.path()), "train"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    let out = evor(&["--out-dir", s(dir.path()), "eval", "--checkpoint", s(&dir.path().join("none.evor"))]);
    assert!(!out.status.success());

    let maze = write_config(dir.path(), "maze.toml", "env = \"pointmass-maze\"\nsteps = 0\nhidden = [8]\neval_episodes = 1\neval_seeds = 1\ncandidates = 2\nrtg_samples_eval = 2\nn_traj = 4\n");
    let run = dir.path().join("maze");
    ok(&["--config", s(&maze), "--out-dir", s(&run), "train"]);
    let out = evor(&["--out-dir", s(&run), "oracle-check", "--checkpoint", s(&run.join("checkpoint.evor"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unsupported"));

    let ck = run.join("checkpoint.evor");
    let out = evor(&["--out-dir", s(&run), "ablate", "--checkpoint", s(&ck), "--axis", "beta", "--values", "1"]);
    assert!(!out.status.success());
}
