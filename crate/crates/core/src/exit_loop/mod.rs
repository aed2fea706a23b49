//! The expert-iteration loop: dataset regimes, warm starts, value targets,
//! and the batched evaluation scheduler.

mod run;
mod scheduler;

pub use run::{run_exit, train_apprentice, IterationRecord, Manifest, Trained, MANIFEST_FILE};
pub use scheduler::{generate_labels_parallel, Labelled, SuspendedSearch};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ExitError, Result};
use crate::hex::{BoardState, Color};
use crate::imitation::{Dataset, Explorer, TargetKind};
use crate::neural::Network;
use crate::parallel::par_map;
use crate::search::SearchMode;
use crate::seed::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Train on the newest dataset only.
    Batch,
    /// Train on the most recent `buffer_capacity` samples.
    OnlineBuffer,
    /// Train on everything; each iteration adds `growth_rate` of the total.
    OnlineExponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitConfig {
    pub max_iterations: usize,
    pub moves_per_iteration: usize,
    pub regime: Regime,
    pub buffer_capacity: usize,
    pub growth_rate: f64,
    /// Dataset size from which value targets are collected and value heads trained.
    pub value_trigger: usize,
    /// Apprentice continuations per position for each value target.
    pub value_games: usize,
    /// Iterations of the tree search that explores the first games.
    pub exploration_iterations: usize,
    pub target: TargetKind,
    pub eval_batch: usize,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
}

/// Dataset size at which the value stage starts: 550,000 positions on
/// 9x9, scaled by board area.
pub fn value_trigger_for(board_size: usize) -> usize {
    (550_000.0 * (board_size * board_size) as f64 / 81.0).round() as usize
}

impl ExitConfig {
    pub fn paper(board_size: usize) -> Self {
        ExitConfig {
            max_iterations: 3,
            moves_per_iteration: 243_000,
            regime: Regime::Batch,
            buffer_capacity: 243_000,
            growth_rate: 0.10,
            value_trigger: value_trigger_for(board_size),
            value_games: 1,
            exploration_iterations: 1_000,
            target: TargetKind::Tpt,
            eval_batch: 64,
            workers: 0,
        }
    }

    pub fn desk(board_size: usize) -> Self {
        ExitConfig {
            moves_per_iteration: 2_000,
            regime: Regime::OnlineBuffer,
            buffer_capacity: 6_000,
            exploration_iterations: 50,
            eval_batch: 16,
            ..ExitConfig::paper(board_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.regime == Regime::OnlineExponential && !(self.growth_rate > 0.0) {
            return Err(ExitError::Config("online_exponential needs a positive growth_rate".into()));
        }
        if self.regime == Regime::OnlineBuffer && self.buffer_capacity < self.moves_per_iteration {
            return Err(ExitError::Config("buffer_capacity must hold at least one iteration of moves".into()));
        }
        if self.moves_per_iteration == 0 {
            return Err(ExitError::Config("moves_per_iteration must be positive".into()));
        }
        if self.eval_batch == 0 {
            return Err(ExitError::Config("eval_batch must be at least 1".into()));
        }
        Ok(())
    }

    /// How many new labels iteration `iteration` (from 1) should request,
    /// given the datasets generated so far.
    pub fn labels_for_iteration(&self, iteration: usize, history: &[Dataset]) -> usize {
        let total: usize = history.iter().map(Dataset::len).sum();
        match self.regime {
            Regime::OnlineExponential if iteration > 1 && total > 0 => (self.growth_rate * total as f64).ceil() as usize,
            _ => self.moves_per_iteration,
        }
    }
}

/// The training set for the newest iteration under `regime`.
pub fn assemble_training_set(history: &[Dataset], config: &ExitConfig) -> Result<Dataset> {
    let last = history.last().ok_or_else(|| ExitError::Dataset("no datasets to assemble".into()))?;
    let mut out = Dataset::new(last.header.board_size, last.header.expert.clone(), last.header.exploration.clone());
    match config.regime {
        Regime::Batch => out.samples = last.samples.clone(),
        Regime::OnlineBuffer => {
            let all: Vec<_> = history.iter().flat_map(|d| d.samples.iter().cloned()).collect();
            let skip = all.len().saturating_sub(config.buffer_capacity);
            out.samples = all.into_iter().skip(skip).collect();
        }
        Regime::OnlineExponential => out.samples = history.iter().flat_map(|d| d.samples.iter().cloned()).collect(),
    }
    Ok(out)
}

/// Which expert to build from the current apprentice.
pub fn warm_start_schedule(apprentice: Option<&Network>, dataset_size: usize, value_trigger: usize) -> SearchMode {
    match apprentice {
        None => SearchMode::Vanilla,
        Some(net) if net.has_value_heads() && dataset_size >= value_trigger => SearchMode::PolicyValue,
        Some(_) => SearchMode::Policy,
    }
}

/// Winners of `games` apprentice self-play continuations from `state`.
pub fn continuation_winners(state: &BoardState, apprentice: &Network, games: usize, rng: &mut ChaCha8Rng) -> Result<(Vec<Color>, u64)> {
    let explorer = Explorer::Apprentice(apprentice);
    let mut winners = Vec::with_capacity(games);
    let mut evaluations = 0;
    for _ in 0..games {
        let mut s = state.clone();
        while !s.is_terminal() {
            let (m, e) = explorer.sample_move(&s, rng)?;
            evaluations += e;
            s.apply(m)?;
        }
        winners.push(s.winner().expect("finished game has a winner"));
    }
    Ok((winners, evaluations))
}

/// Fraction of `winners` equal to `perspective`.
pub fn value_target(winners: &[Color], perspective: Color) -> f64 {
    winners.iter().filter(|&&w| w == perspective).count() as f64 / winners.len() as f64
}

/// Attaches a Monte Carlo value target to every sample that lacks one:
/// the share of `games` apprentice continuations won by the player to
/// move. Continuations of a sample are seeded from its game id. Returns
/// the network evaluations spent.
pub fn add_value_targets(dataset: &mut Dataset, apprentice: &Network, games: usize, master_seed: u64, workers: usize) -> Result<u64> {
    if games == 0 {
        return Ok(0);
    }
    let todo: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.samples[i].z.is_none()).collect();
    let targets = par_map(&todo, workers, |_, &i| -> Result<(f64, u64)> {
        let sample = &dataset.samples[i];
        let state = sample.position()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(master_seed, streams::VALUE, sample.provenance.game));
        let (winners, evals) = continuation_winners(&state, apprentice, games, &mut rng)?;
        Ok((value_target(&winners, sample.to_move), evals))
    });
    let mut evaluations = 0;
    for (&i, t) in todo.iter().zip(targets) {
        let (z, evals) = t?;
        dataset.samples[i].z = Some(z);
        evaluations += evals;
    }
    Ok(evaluations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imitation::{Provenance, TrainingSample};
    use crate::neural::{Heads, NetworkConfig};

    fn dataset(iteration: u32, n: usize) -> Dataset {
        let mut d = Dataset::new(3, "e", "x");
        for g in 0..n {
            d.samples.push(TrainingSample {
                board_size: 3,
                moves: vec![],
                tpt: vec![(0, 1)],
                total: 1,
                chosen: 0,
                z: None,
                to_move: Color::Black,
                provenance: Provenance { iteration, game: g as u64, ply: 0 },
            });
        }
        d
    }

    #[test]
    fn regimes() {
        let history = vec![dataset(1, 6), dataset(2, 6)];
        let mut cfg = ExitConfig::desk(3);
        cfg.regime = Regime::Batch;
        let batch = assemble_training_set(&history, &cfg).unwrap();
        assert!(batch.samples.iter().all(|s| s.provenance.iteration == 2));
        cfg.regime = Regime::OnlineBuffer;
        cfg.buffer_capacity = 10;
        let buf = assemble_training_set(&history, &cfg).unwrap();
        assert_eq!(buf.len(), 10);
        assert_eq!(buf.samples[0].provenance, Provenance { iteration: 1, game: 2, ply: 0 });
        assert_eq!(buf.samples[9].provenance, Provenance { iteration: 2, game: 5, ply: 0 });
        cfg.regime = Regime::OnlineExponential;
        assert_eq!(assemble_training_set(&history, &cfg).unwrap().len(), 12);
        assert!(assemble_training_set(&[], &cfg).is_err());
    }

    #[test]
    fn exponential_growth_request() {
        let mut cfg = ExitConfig::desk(5);
        cfg.regime = Regime::OnlineExponential;
        cfg.growth_rate = 0.10;
        assert_eq!(cfg.labels_for_iteration(2, &[dataset(1, 1000)]), 100);
        assert_eq!(cfg.labels_for_iteration(1, &[]), cfg.moves_per_iteration);
        cfg.growth_rate = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn buffer_must_hold_an_iteration() {
        let mut cfg = ExitConfig::desk(5);
        cfg.regime = Regime::OnlineBuffer;
        cfg.buffer_capacity = cfg.moves_per_iteration - 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn warm_start_progression() {
        assert_eq!(warm_start_schedule(None, 0, 10_000), SearchMode::Vanilla);
        let policy = Network::new(NetworkConfig::desk(3)).unwrap();
        assert_eq!(warm_start_schedule(Some(&policy), 12_000, 10_000), SearchMode::Policy);
        let valued = Network::new(NetworkConfig::desk(3).with_heads(Heads::PolicyValue)).unwrap();
        assert_eq!(warm_start_schedule(Some(&valued), 9_999, 10_000), SearchMode::Policy);
        assert_eq!(warm_start_schedule(Some(&valued), 12_000, 10_000), SearchMode::PolicyValue);
        assert_eq!(value_trigger_for(9), 550_000);
    }

    #[test]
    fn value_targets_are_antisymmetric() {
        let winners = [Color::Black, Color::White, Color::Black];
        let b = value_target(&winners, Color::Black);
        assert_eq!(b, 2.0 / 3.0);
        approx::assert_relative_eq!(value_target(&winners, Color::White), 1.0 - b, max_relative = 1e-12);
        for w in winners {
            assert_eq!(value_target(&[w], Color::White), 1.0 - value_target(&[w], Color::Black));
        }
    }

    #[test]
    fn zero_games_leaves_dataset_unchanged() {
        let net = Network::new(NetworkConfig::desk(3)).unwrap();
        let mut d = dataset(1, 4);
        let before = d.clone();
        assert_eq!(add_value_targets(&mut d, &net, 0, 1, 1).unwrap(), 0);
        assert_eq!(d, before);
    }
}
