//! Driving a full run: iterate, write artifacts, resume after interruption.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{add_value_targets, assemble_training_set, warm_start_schedule, Regime};
use crate::config::RunConfig;
use crate::error::{ExitError, Result};
use crate::imitation::{extend_dataset, Dataset, Expert, Explorer, Generation};
use crate::neural::train::{stratified_split, train, TrainReport};
use crate::neural::{checkpoint, Heads, Network};
use crate::search::SearchMode;
use crate::seed::{self, streams};

pub const MANIFEST_FILE: &str = "manifest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub regime: Regime,
    /// Expert that labelled this iteration's positions.
    pub expert_mode: SearchMode,
    pub expert: String,
    pub exploration: String,
    pub dataset: String,
    pub checkpoint: String,
    /// Seeds of network initialisation and training, in hex.
    pub init_seed: String,
    pub train_seed: String,
    pub new_samples: usize,
    pub training_samples: usize,
    pub value_stage: bool,
    pub epochs: usize,
    pub restored_epoch: usize,
    pub validation_loss: f64,
    /// Network evaluations spent generating this iteration's data.
    pub evaluations: u64,
    pub total_evaluations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: RunConfig,
    #[serde(default)]
    pub iterations: Vec<IterationRecord>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        toml::from_str(&text).map_err(|e| ExitError::Parse(format!("manifest: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| ExitError::Format(e.to_string()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        std::fs::write(&tmp, self.to_toml()?)?;
        std::fs::rename(tmp, dir.join(MANIFEST_FILE))?;
        Ok(())
    }

    pub fn load_checkpoint(&self, dir: &Path, iteration: usize) -> Result<Network> {
        let record = self
            .iterations
            .iter()
            .find(|r| r.iteration == iteration)
            .ok_or_else(|| ExitError::Config(format!("run has no iteration {iteration}")))?;
        checkpoint::load(&dir.join(&record.checkpoint))
    }
}

fn same_run(a: &RunConfig, b: &RunConfig) -> bool {
    let mut a = a.clone();
    a.exit.max_iterations = b.exit.max_iterations;
    a.exit.workers = b.exit.workers;
    a == *b
}

/// Runs (or resumes) expert iteration in `dir`, writing `dataset_<i>`,
/// `ckpt_<i>` and the manifest after every iteration.
pub fn run_exit(config: &RunConfig, dir: &Path) -> Result<Manifest> {
    config.validate()?;
    std::fs::create_dir_all(dir)?;
    let mut manifest = if dir.join(MANIFEST_FILE).exists() {
        let m = Manifest::load(dir)?;
        if !same_run(&m.config, config) {
            return Err(ExitError::Config(format!("{} holds a run with a different configuration", dir.display())));
        }
        Manifest { config: config.clone(), iterations: m.iterations }
    } else {
        Manifest { config: config.clone(), iterations: Vec::new() }
    };
    manifest.iterations.retain(|r| r.iteration <= config.exit.max_iterations);

    let mut history = Vec::new();
    for r in &manifest.iterations {
        history.push(Dataset::load(&dir.join(&r.dataset))?);
    }
    let mut apprentice = match manifest.iterations.last() {
        Some(r) => Some(checkpoint::load(&dir.join(&r.checkpoint))?),
        None => None,
    };
    manifest.save(dir)?;

    for iteration in manifest.iterations.len() + 1..=config.exit.max_iterations {
        let record = run_iteration(config, dir, iteration, &mut history, &mut apprentice, &manifest)?;
        manifest.iterations.push(record);
        manifest.save(dir)?;
    }
    Ok(manifest)
}

/// A freshly trained apprentice and the seeds that produced it.
#[derive(Debug, Clone)]
pub struct Trained {
    pub network: Network,
    pub report: TrainReport,
    pub init_seed: u64,
    pub train_seed: u64,
}

/// Trains a new network on `training` with a validation split stratified by
/// iteration. Seeds derive from the master seed and `key`; the returned
/// parameters are rounded to checkpoint precision.
pub fn train_apprentice(training: &Dataset, config: &RunConfig, heads: Heads, key: u64) -> Result<Trained> {
    let examples = training.examples(config.exit.target)?;
    let groups: Vec<u64> = training.samples.iter().map(|s| s.provenance.iteration as u64).collect();
    let split_seed = seed::derive(config.seed, streams::SPLIT, key);
    let (train_idx, val_idx) = stratified_split(&groups, config.train.validation_fraction, split_seed);
    let train_set: Vec<_> = train_idx.iter().map(|&i| examples[i].clone()).collect();
    let val_set: Vec<_> = val_idx.iter().map(|&i| examples[i].clone()).collect();

    let init_seed = seed::derive(config.seed, streams::INIT, key);
    let train_seed = seed::derive(config.seed, streams::TRAIN, key);
    let mut network = Network::initialised(config.network.clone().with_heads(heads).with_seed(init_seed))?;
    let mut train_config = config.train.clone();
    train_config.seed = train_seed;
    let report = train(&mut network, &train_set, &val_set, &train_config)?;
    network.params_mut().quantize_f32();
    Ok(Trained { network, report, init_seed, train_seed })
}

fn run_iteration(
    config: &RunConfig,
    dir: &Path,
    iteration: usize,
    history: &mut Vec<Dataset>,
    apprentice: &mut Option<Network>,
    manifest: &Manifest,
) -> Result<IterationRecord> {
    let exit = &config.exit;
    let n = config.board_size;
    let size_before: usize = history.iter().map(Dataset::len).sum();
    let mode = warm_start_schedule(apprentice.as_ref(), size_before, exit.value_trigger);
    let search = config.search.for_mode(mode);
    let expert = Expert { search, network: apprentice.as_ref() };
    let exploration_search = config.search.vanilla.clone().with_iterations(exit.exploration_iterations);
    let explorer = match apprentice.as_ref() {
        None => Explorer::Mcts { search: &exploration_search, network: None },
        Some(net) => Explorer::Apprentice(net),
    };
    let gen = Generation {
        board_size: n,
        iteration: iteration as u32,
        first_game: history.iter().map(Dataset::next_game_id).max().unwrap_or(0),
        master_seed: config.seed,
        workers: exit.workers,
        eval_batch: exit.eval_batch,
    };
    let count = exit.labels_for_iteration(iteration, history);
    let mut dataset = Dataset::new(n, expert.descriptor(), explorer.descriptor());
    let stats = extend_dataset(&mut dataset, &explorer, &expert, count, &gen)?;
    let mut evaluations = stats.evaluations;
    history.push(dataset);

    let size_after: usize = history.iter().map(Dataset::len).sum();
    let value_stage = size_after >= exit.value_trigger && apprentice.is_some();
    if value_stage {
        let net = apprentice.as_ref().expect("checked above");
        for (j, d) in history.iter_mut().enumerate() {
            let spent = add_value_targets(d, net, exit.value_games, config.seed, exit.workers)?;
            evaluations += spent;
            if spent > 0 && j + 1 < iteration {
                d.save(&dir.join(format!("dataset_{}", j + 1)))?;
            }
        }
    }

    let training = assemble_training_set(history, exit)?;
    let heads = if value_stage { Heads::PolicyValue } else { Heads::Policy };
    let Trained { network: net, report, init_seed, train_seed } = train_apprentice(&training, config, heads, iteration as u64)?;

    let dataset_file = format!("dataset_{iteration}");
    let checkpoint_file = format!("ckpt_{iteration}");
    history.last().expect("pushed above").save(&dir.join(&dataset_file))?;
    checkpoint::save(&net, &dir.join(&checkpoint_file))?;
    let previous_total = manifest.iterations.last().map_or(0, |r| r.total_evaluations);
    let record = IterationRecord {
        iteration,
        regime: exit.regime,
        expert_mode: mode,
        expert: expert.descriptor(),
        exploration: explorer.descriptor(),
        dataset: dataset_file,
        checkpoint: checkpoint_file,
        init_seed: format!("{init_seed:#018x}"),
        train_seed: format!("{train_seed:#018x}"),
        new_samples: history.last().map_or(0, Dataset::len),
        training_samples: training.len(),
        value_stage,
        epochs: report.epochs_run,
        restored_epoch: report.restored_epoch,
        validation_loss: report.validation_losses.get(report.restored_epoch.saturating_sub(1)).copied().unwrap_or(f64::NAN),
        evaluations,
        total_evaluations: previous_total + evaluations,
    };
    log::info!(
        "iteration {iteration}: {} labels by {} (mean evaluation batch {:.1}), trained {} epochs on {} samples",
        record.new_samples,
        record.expert,
        stats.mean_eval_batch,
        record.epochs,
        record.training_samples
    );
    *apprentice = Some(net);
    Ok(record)
}
