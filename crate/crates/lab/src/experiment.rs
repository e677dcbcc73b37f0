use std::path::{Path, PathBuf};

use tsc_core::train::{run_baseline, Controller, EpisodeLog, Evaluation, Rollout, TrainConfig, Trainer, Variant};

use crate::checkpoint;
use crate::error::LabError;
use crate::output::{mean_std, write_metrics, CsvSink, TrainRow, ABLATION_SCHEMA, TRAIN_LOG_SCHEMA};
use crate::scenario::Scenario;

pub const TRAIN_LOG: &str = "train_log.csv";
pub const CHECKPOINT: &str = "checkpoint.bin";
/// Episodes averaged for a run's final mean reward.
pub const FINAL_WINDOW: usize = 50;

/// Collect the current episode's rollouts, one scoped thread per environment.
pub fn collect_parallel(trainer: &Trainer) -> Result<Vec<Rollout>, LabError> {
    let envs = trainer.config.envs;
    if envs == 1 {
        return Ok(vec![trainer.collect(0)?]);
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..envs).map(|k| s.spawn(move || trainer.collect(k))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("rollout thread panicked").map_err(LabError::from))
            .collect()
    })
}

pub fn new_trainer(config: &TrainConfig, scenario: &Scenario) -> Result<Trainer, LabError> {
    Ok(Trainer::new(config.clone(), scenario.network()?, scenario.flow.clone())?)
}

/// Where a training run writes its log and checkpoint.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub checkpoint_every: usize,
}

impl RunOutput {
    pub fn log_path(&self) -> PathBuf {
        self.dir.join(TRAIN_LOG)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.dir.join(CHECKPOINT)
    }
}

/// Train until `trainer.episode` reaches `until`, logging every episode. With an output the
/// log is appended (created when the trainer starts from episode 0) and the checkpoint is
/// rewritten every `checkpoint_every` episodes and after the last one.
pub fn train(trainer: &mut Trainer, scenario: &Scenario, until: u64, out: Option<&RunOutput>) -> Result<Vec<EpisodeLog>, LabError> {
    let mut sink = match out {
        Some(o) if trainer.episode == 0 || !o.log_path().exists() => Some(CsvSink::create(&o.log_path(), TRAIN_LOG_SCHEMA)?),
        Some(o) => Some(CsvSink::append(&o.log_path())?),
        None => None,
    };
    if trainer.episode == 0 && trainer.config.pretrain_episodes > 0 {
        trainer.pretrain_meta().map_err(|e| LabError::run("meta pretraining", e))?;
    }
    let mut logs = Vec::new();
    while trainer.episode < until {
        let episode = trainer.episode;
        let rollouts = collect_parallel(trainer)?;
        let log = trainer.train_on(&rollouts).map_err(|e| LabError::run(format!("episode {episode}"), e))?;
        if let Some(sink) = sink.as_mut() {
            sink.row(&TrainRow::from(&log))?;
        }
        logs.push(log);
        if let Some(o) = out {
            let done = trainer.episode == until;
            if done || trainer.episode % o.checkpoint_every as u64 == 0 {
                checkpoint::save(&o.checkpoint_path(), trainer, scenario)?;
            }
        }
    }
    Ok(logs)
}

pub fn baselines(scenario: &Scenario, controllers: &[Controller], seeds: &[u64]) -> Result<Vec<(String, Vec<(u64, Evaluation)>)>, LabError> {
    let net = scenario.network()?;
    controllers
        .iter()
        .map(|&c| {
            let runs = seeds
                .iter()
                .map(|&s| {
                    run_baseline(net.clone(), &scenario.flow, c, s)
                        .map(|e| (s, e))
                        .map_err(|e| LabError::run(format!("{} seed {s}", c.name()), e))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok((c.name().to_string(), runs))
        })
        .collect()
}

pub fn evaluate(trainer: &Trainer, seeds: &[u64]) -> Result<Vec<(u64, Evaluation)>, LabError> {
    seeds
        .iter()
        .map(|&s| trainer.evaluate(s).map(|e| (s, e)).map_err(|e| LabError::run(format!("evaluation seed {s}"), e)))
        .collect()
}

pub fn write_evaluation(path: &Path, label: &str, runs: Vec<(u64, Evaluation)>) -> Result<(), LabError> {
    write_metrics(path, &[(label.to_string(), runs)])
}

pub fn final_mean_reward(logs: &[EpisodeLog]) -> f64 {
    let tail = &logs[logs.len().saturating_sub(FINAL_WINDOW)..];
    mean_std(&tail.iter().map(|l| l.mean_reward).collect::<Vec<_>>()).0
}

/// Per-seed outcome of one ablation variant.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantRun {
    pub seed: u64,
    pub final_mean_reward: f64,
    pub eval: Evaluation,
    pub logs: Vec<EpisodeLog>,
}

/// Train every variant on every seed with the same budget, then evaluate on that seed.
pub fn ablate(base: &TrainConfig, scenario: &Scenario, variants: &[Variant], seeds: &[u64], episodes: u64) -> Result<Vec<(Variant, Vec<VariantRun>)>, LabError> {
    variants
        .iter()
        .map(|&variant| {
            let runs = seeds
                .iter()
                .map(|&seed| {
                    let mut trainer = new_trainer(&TrainConfig { seed, variant, ..base.clone() }, scenario)?;
                    let logs = train(&mut trainer, scenario, episodes, None)?;
                    let eval = trainer.evaluate(seed).map_err(|e| LabError::run(format!("{} seed {seed}", variant.name()), e))?;
                    Ok(VariantRun { seed, final_mean_reward: final_mean_reward(&logs), eval, logs })
                })
                .collect::<Result<Vec<_>, LabError>>()?;
            Ok((variant, runs))
        })
        .collect()
}

/// Side-by-side table: one row per (metric, seed) plus a mean row per metric, one column per variant.
pub fn write_ablation(path: &Path, results: &[(Variant, Vec<VariantRun>)]) -> Result<(), LabError> {
    let mut sink = CsvSink::create(path, ABLATION_SCHEMA)?;
    let mut header = vec!["metric".to_string(), "seed".to_string()];
    header.extend(results.iter().map(|(v, _)| v.name().to_string()));
    sink.record(&header)?;
    let metrics: [(&str, fn(&VariantRun) -> f64); 3] =
        [("final_mean_reward", |r| r.final_mean_reward), ("eval_att", |r| r.eval.att), ("eval_adt", |r| r.eval.adt)];
    let seeds: Vec<u64> = results.first().map(|(_, runs)| runs.iter().map(|r| r.seed).collect()).unwrap_or_default();
    for (name, f) in metrics {
        for (k, seed) in seeds.iter().enumerate() {
            let mut row = vec![name.to_string(), seed.to_string()];
            row.extend(results.iter().map(|(_, runs)| f(&runs[k]).to_string()));
            sink.record(&row)?;
        }
        let mut row = vec![name.to_string(), "mean".to_string()];
        row.extend(results.iter().map(|(_, runs)| mean_std(&runs.iter().map(f).collect::<Vec<_>>()).0.to_string()));
        sink.record(&row)?;
    }
    Ok(())
}
