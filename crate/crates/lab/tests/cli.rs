use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tsc_lab::checkpoint;
use tsc_lab::output::{read_rows, MetricsRow, TrainRow};
use tsc_lab::{ExperimentConfig, Scenario};

// Tiny model so a training episode costs well under a second.
const SMALL_MODEL: &str = r#"
[train]
epochs = 1
meta_epochs = 1
meta_batch = 16
checkpoint_every = 2

[train.meta]
history = 4
ff_dim = 6
lstm_hidden = 4
lstm_layers = 1
encoder_layers = 1
goal_dim = 4

[train.sub]
head = [16, 8]
branch_dim = 4
latent_dim = 3
goal_dim = 4
"#;

fn tsc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsc")).args(args).env_remove("TSC_OUT_ROOT").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = tsc(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Fixture {
        let f = Fixture { dir: tempfile::tempdir().unwrap() };
        ok(&["generate-scenario", "--kind", "grid2x2", "--out", s(&f.scenario())]);
        fs::write(f.config(), SMALL_MODEL).unwrap();
        f
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn scenario(&self) -> PathBuf {
        self.path("grid2x2.toml")
    }

    fn config(&self) -> PathBuf {
        self.path("small.toml")
    }

    fn train(&self, out: &str, episodes: &str, seed: &str) -> PathBuf {
        let out = self.path(out);
        ok(&["train", "--config", s(&self.config()), "--scenario", s(&self.scenario()), "--seed", seed, "--episodes", episodes, "--out", s(&out)]);
        out.join(format!("seed_{seed}"))
    }
}

#[test]
fn train_smoke_writes_log_and_checkpoint() {
    let f = Fixture::new();
    let run = f.train("run", "2", "0");
    let (schema, rows): (String, Vec<TrainRow>) = read_rows(&run.join("train_log.csv")).unwrap();
    assert_eq!(schema, "train_log/1");
    assert_eq!(rows.len(), 2);
    assert_eq!(rows.iter().map(|r| r.episode).collect::<Vec<_>>(), [0, 1]);
    assert!(rows.iter().all(|r| r.mean_reward.is_finite() && r.att > 0.0 && r.variant == "full"));
    let (trainer, scenario) = checkpoint::load(&run.join("checkpoint.bin")).unwrap();
    assert_eq!(trainer.episode, 2);
    assert_eq!(scenario, Scenario::load(&f.scenario()).unwrap());
}

#[test]
fn generated_scenarios_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a.toml"), dir.path().join("b.toml"), dir.path().join("c.toml"));
    ok(&["generate-scenario", "--kind", "grid4x4", "--seed", "5", "--out", s(&a)]);
    ok(&["generate-scenario", "--kind", "grid4x4", "--seed", "5", "--out", s(&b)]);
    ok(&["generate-scenario", "--kind", "grid4x4", "--seed", "6", "--out", s(&c)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn baseline_rows_and_summary_are_deterministic() {
    let f = Fixture::new();
    let run = |out: &str| {
        let path = f.path(out);
        ok(&["baseline", "--scenario", s(&f.scenario()), "--seed", "0", "--seed", "1", "--seed", "2", "--out", s(&path)]);
        fs::read_to_string(path.join("baseline.csv")).unwrap()
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(a, b);
    let (schema, rows): (String, Vec<MetricsRow>) = read_rows(&f.path("a/baseline.csv")).unwrap();
    assert_eq!(schema, "metrics/1");
    for policy in ["ftc", "maxpressure"] {
        let mine: Vec<&MetricsRow> = rows.iter().filter(|r| r.policy == policy).collect();
        let seeds: Vec<&str> = mine.iter().map(|r| r.seed.as_str()).collect();
        assert_eq!(seeds, ["0", "1", "2", "mean", "std"], "{policy}");
        let mean = mine[..3].iter().map(|r| r.att).sum::<f64>() / 3.0;
        assert!((mine[3].att - mean).abs() < 1e-9);
    }
}

#[test]
fn untrained_checkpoint_evaluates_to_finite_metrics() {
    let f = Fixture::new();
    let run = f.train("run", "1", "3");
    let out = f.path("eval");
    ok(&["evaluate", "--scenario", s(&f.scenario()), "--checkpoint", s(&run.join("checkpoint.bin")), "--seed", "0", "--out", s(&out)]);
    let (_, rows): (String, Vec<MetricsRow>) = read_rows(&out.join("evaluation.csv")).unwrap();
    assert_eq!(rows[0].policy, "full");
    assert!(rows.iter().all(|r| r.att.is_finite() && r.adt.is_finite()));
}

#[test]
fn ablation_has_one_column_per_variant() {
    let f = Fixture::new();
    let out = f.path("abl");
    ok(&[
        "ablate", "--config", s(&f.config()), "--scenario", s(&f.scenario()), "--seed", "0", "--variant", "full", "--variant", "no_meta",
        "--episodes", "1", "--out", s(&out),
    ]);
    let text = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# schema: ablation/1"));
    assert_eq!(lines.next(), Some("metric,seed,full,no_meta"));
    let body: Vec<&str> = lines.collect();
    // three metrics, each with one seed row and a mean row
    assert_eq!(body.len(), 6);
    assert!(body.iter().all(|l| l.split(',').count() == 4));
}

#[test]
fn scenario_version_mismatch_is_rejected() {
    let f = Fixture::new();
    let text = fs::read_to_string(f.scenario()).unwrap().replacen("version = 1", "version = 99", 1);
    let bad = f.path("bad.toml");
    fs::write(&bad, text).unwrap();
    let out = tsc(&["baseline", "--scenario", s(&bad), "--seed", "0", "--out", s(&f.path("x"))]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));
}

#[test]
fn exit_codes_distinguish_failures() {
    let f = Fixture::new();
    let bad_kind = tsc(&["generate-scenario", "--kind", "grid9x9", "--out", s(&f.path("k.toml"))]);
    assert_eq!(bad_kind.status.code(), Some(2));
    let missing = tsc(&["baseline", "--scenario", s(&f.path("missing.toml")), "--seed", "0"]);
    assert_eq!(missing.status.code(), Some(3));
    fs::write(f.path("unknown.toml"), "[train]\nnot_a_field = 1\n").unwrap();
    let unknown = tsc(&["baseline", "--config", s(&f.path("unknown.toml")), "--scenario", s(&f.scenario())]);
    assert_eq!(unknown.status.code(), Some(2));
    fs::write(f.path("junk.bin"), b"not a checkpoint").unwrap();
    let junk = tsc(&["evaluate", "--checkpoint", s(&f.path("junk.bin")), "--seed", "0", "--out", s(&f.path("j"))]);
    assert_eq!(junk.status.code(), Some(4));
}

#[test]
fn training_is_deterministic_across_processes() {
    let f = Fixture::new();
    let a = f.train("a", "5", "1");
    let b = f.train("b", "5", "1");
    assert_eq!(fs::read(a.join("train_log.csv")).unwrap(), fs::read(b.join("train_log.csv")).unwrap());
    assert_eq!(fs::read(a.join("checkpoint.bin")).unwrap(), fs::read(b.join("checkpoint.bin")).unwrap());
}

#[test]
fn resume_appends_to_the_log() {
    let f = Fixture::new();
    let full = f.train("full", "3", "2");
    let part = f.train("part", "1", "2");
    ok(&["train", "--config", s(&f.config()), "--episodes", "3", "--checkpoint", s(&part.join("checkpoint.bin")), "--out", s(&part)]);
    assert_eq!(fs::read(full.join("train_log.csv")).unwrap(), fs::read(part.join("train_log.csv")).unwrap());
}

#[test]
fn config_file_round_trips() {
    let f = Fixture::new();
    let config = ExperimentConfig::load(&f.config()).unwrap();
    assert_eq!(config.train.sub.head, [16, 8]);
    assert_eq!(config.seeds, [0, 1, 2]);
    let again = ExperimentConfig::from_toml(&config.to_toml()).unwrap();
    assert_eq!(config, again);
}
