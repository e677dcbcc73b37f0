use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use tsc_core::sim::FlowPattern;
use tsc_core::train::{Controller, Variant};

use crate::checkpoint;
use crate::config::{resolve_out, ExperimentConfig};
use crate::error::LabError;
use crate::experiment::{self, RunOutput};
use crate::output::write_metrics;
use crate::scenario::{Scenario, ScenarioKind};

#[derive(Debug, Parser)]
#[command(name = "tsc", version, about = "Hierarchical traffic signal control experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default, Clone)]
pub struct Common {
    /// Experiment config (TOML); every field is optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scenario file; overrides the config's `scenario`.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Seed; repeat for several. Overrides the config's seed list.
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    /// Output directory; relative paths are placed under $TSC_OUT_ROOT when set.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a scenario file for a grid kind and demand pattern.
    GenerateScenario {
        #[arg(long)]
        kind: String,
        #[arg(long, default_value = "multimodal_gaussian")]
        flow: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run fixed-time and/or max-pressure control, one episode per seed.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// ftc or maxpressure; repeat for both (default: both).
        #[arg(long = "controller")]
        controllers: Vec<String>,
    },
    /// Train one policy per seed, writing a log and checkpoint per seed.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Resume from this checkpoint (single seed).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        strict_paper_mode: bool,
    },
    /// Greedy evaluation of a checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train and evaluate several variants with shared seeds and budgets.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Variant name; repeat (default: all five).
        #[arg(long = "variant")]
        variants: Vec<String>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        strict_paper_mode: bool,
    },
}

/// Config with command-line overrides applied.
pub fn load_config(common: &Common) -> Result<ExperimentConfig, LabError> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = &common.scenario {
        config.scenario = Some(s.clone());
    }
    if !common.seeds.is_empty() {
        config.seeds = common.seeds.clone();
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn scenario_of(config: &ExperimentConfig) -> Result<Scenario, LabError> {
    let path = config.scenario.as_ref().ok_or_else(|| LabError::Config("no scenario: pass --scenario or set `scenario`".into()))?;
    Scenario::load(path)
}

pub fn run(cli: Cli) -> Result<Vec<PathBuf>, LabError> {
    match cli.command {
        Command::GenerateScenario { kind, flow, seed, out } => {
            let pattern = FlowPattern::parse(&flow)?;
            let scenario = Scenario::generate(ScenarioKind::parse(&kind)?, pattern, seed);
            let path = resolve_out(&out);
            scenario.save(&path)?;
            Ok(vec![path])
        }
        Command::Baseline { common, controllers } => {
            let config = load_config(&common)?;
            let scenario = scenario_of(&config)?;
            let controllers = if controllers.is_empty() {
                vec![Controller::Ftc, Controller::MaxPressure]
            } else {
                controllers.iter().map(|c| Controller::parse(c)).collect::<Result<_, _>>()?
            };
            let results = experiment::baselines(&scenario, &controllers, &config.seeds)?;
            let path = resolve_out(&config.out_dir).join("baseline.csv");
            write_metrics(&path, &results)?;
            Ok(vec![path])
        }
        Command::Train { common, variant, episodes, checkpoint, strict_paper_mode } => {
            let mut config = load_config(&common)?;
            apply_train_flags(&mut config, variant.as_deref(), episodes, strict_paper_mode)?;
            let out = resolve_out(&config.out_dir);
            if let Some(ck) = checkpoint {
                return resume(&config, &ck, &out);
            }
            let scenario = scenario_of(&config)?;
            let until = config.train.episode_count() as u64;
            let mut written = Vec::new();
            for &seed in &config.seeds {
                let run = RunOutput { dir: out.join(format!("seed_{seed}")), checkpoint_every: config.train.checkpoint_every };
                let mut trainer = experiment::new_trainer(&tsc_core::train::TrainConfig { seed, ..config.train.clone() }, &scenario)?;
                experiment::train(&mut trainer, &scenario, until, Some(&run))?;
                written.extend([run.log_path(), run.checkpoint_path()]);
            }
            Ok(written)
        }
        Command::Evaluate { common, checkpoint } => {
            let config = load_config(&common)?;
            let (trainer, stored) = checkpoint::load(&checkpoint)?;
            if let Some(path) = &config.scenario {
                let given = Scenario::load(path)?;
                if given != stored {
                    return Err(LabError::Version(format!("scenario {} does not match the checkpoint's", path.display())));
                }
            }
            let runs = experiment::evaluate(&trainer, &config.seeds)?;
            let path = resolve_out(&config.out_dir).join("evaluation.csv");
            experiment::write_evaluation(&path, trainer.config.variant.name(), runs)?;
            Ok(vec![path])
        }
        Command::Ablate { common, variants, episodes, strict_paper_mode } => {
            let mut config = load_config(&common)?;
            apply_train_flags(&mut config, None, episodes, strict_paper_mode)?;
            let scenario = scenario_of(&config)?;
            let variants = if variants.is_empty() {
                Variant::ALL.to_vec()
            } else {
                variants.iter().map(|v| Variant::parse(v)).collect::<Result<_, _>>()?
            };
            let until = config.train.episode_count() as u64;
            let results = experiment::ablate(&config.train, &scenario, &variants, &config.seeds, until)?;
            let path = resolve_out(&config.out_dir).join("ablation.csv");
            experiment::write_ablation(&path, &results)?;
            Ok(vec![path])
        }
    }
}

fn apply_train_flags(config: &mut ExperimentConfig, variant: Option<&str>, episodes: Option<usize>, strict: bool) -> Result<(), LabError> {
    if let Some(v) = variant {
        config.train.variant = Variant::parse(v)?;
    }
    if episodes.is_some() {
        config.train.episodes = episodes;
    }
    config.train.strict_paper_mode |= strict;
    config.validate()
}

/// Continue a checkpointed run up to the configured episode count, in `out`.
fn resume(config: &ExperimentConfig, ck: &Path, out: &Path) -> Result<Vec<PathBuf>, LabError> {
    let (mut trainer, scenario) = checkpoint::load(ck)?;
    if let Some(path) = &config.scenario {
        if Scenario::load(path)? != scenario {
            return Err(LabError::Version(format!("scenario {} does not match the checkpoint's", path.display())));
        }
    }
    let run = RunOutput { dir: out.to_path_buf(), checkpoint_every: config.train.checkpoint_every };
    let until = config.train.episodes.map(|e| e as u64).unwrap_or_else(|| trainer.config.episode_count() as u64);
    experiment::train(&mut trainer, &scenario, until, Some(&run))?;
    Ok(vec![run.log_path(), run.checkpoint_path()])
}
