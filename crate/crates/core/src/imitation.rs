//! Imitation datasets: exploration games, one sampled position per game,
//! expert labels and dataset aggregation.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ExitError, Result};
use crate::exit_loop::generate_labels_parallel;
use crate::hex::{BoardState, Color, Move};
use crate::neural::{Example, Network};
use crate::parallel::par_map;
use crate::search::{run_search, SearchConfig, SearchResult};
use crate::seed::{self, streams};

pub const DATASET_FORMAT: &str = "exit-dataset";
pub const DATASET_VERSION: u32 = 1;

/// Policy that plays exploration games.
#[derive(Debug, Clone, Copy)]
pub enum Explorer<'a> {
    Random,
    /// Tree search whose move is sampled in proportion to root visits.
    Mcts { search: &'a SearchConfig, network: Option<&'a Network> },
    /// Apprentice sampling from its softmax at temperature 1.
    Apprentice(&'a Network),
}

impl Explorer<'_> {
    pub fn descriptor(&self) -> String {
        match self {
            Explorer::Random => "random".into(),
            Explorer::Mcts { search, .. } => format!("mcts-{:?}-{}", search.mode, search.iterations).to_lowercase(),
            Explorer::Apprentice(_) => "apprentice".into(),
        }
    }

    /// Samples one move; also returns the network evaluations spent.
    pub fn sample_move(&self, state: &BoardState, rng: &mut ChaCha8Rng) -> Result<(Move, u64)> {
        let n = state.size();
        match self {
            Explorer::Random => {
                let legal = state.legal_moves();
                Ok((legal[rng.random_range(0..legal.len())], 0))
            }
            Explorer::Mcts { search, network } => {
                let config = (*search).clone().with_seed(rng.random());
                let result = run_search(state, &config, *network)?;
                let cell = sample_index(&result.visits.iter().map(|&v| v as f64).collect::<Vec<_>>(), rng)?;
                Ok((Move::from_index(cell, n), result.evaluations))
            }
            Explorer::Apprentice(net) => {
                let out = net.evaluate(state, 1.0)?;
                Ok((Move::from_index(sample_index(&out.policy, rng)?, n), 1))
            }
        }
    }
}

pub(crate) fn sample_index(weights: &[f64], rng: &mut ChaCha8Rng) -> Result<usize> {
    let dist = WeightedIndex::new(weights).map_err(|e| ExitError::Search(format!("cannot sample a move: {e}")))?;
    Ok(dist.sample(rng))
}

/// A position drawn from an exploration game.
#[derive(Debug, Clone)]
pub struct SampledPosition {
    pub state: BoardState,
    pub game_length: usize,
    pub evaluations: u64,
}

/// Plays one complete game with `explorer` and returns the position at a
/// uniformly chosen ply of it.
pub fn sample_position(explorer: &Explorer, board_size: usize, rng: &mut ChaCha8Rng) -> Result<SampledPosition> {
    let mut state = BoardState::new(board_size)?;
    let mut evaluations = 0;
    while !state.is_terminal() {
        let (m, evals) = explorer.sample_move(&state, rng)?;
        evaluations += evals;
        state.apply(m)?;
    }
    let game_length = state.ply();
    let ply = rng.random_range(0..game_length);
    let history = state.history_indices();
    Ok(SampledPosition { state: BoardState::from_history(board_size, &history[..ply])?, game_length, evaluations })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Provenance {
    pub iteration: u32,
    pub game: u64,
    pub ply: u32,
}

/// Which imitation target a sample trains towards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// Root visit distribution.
    Tpt,
    /// One-hot on the most visited move.
    Cat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub board_size: usize,
    /// Cell indices from the empty board.
    pub moves: Vec<usize>,
    /// Non-zero root visit counts as (cell, count).
    pub tpt: Vec<(usize, u32)>,
    pub total: u64,
    pub chosen: usize,
    pub z: Option<f64>,
    pub to_move: Color,
    pub provenance: Provenance,
}

impl TrainingSample {
    pub fn from_search(state: &BoardState, result: &SearchResult, provenance: Provenance) -> TrainingSample {
        let n = state.size();
        TrainingSample {
            board_size: n,
            moves: state.history_indices(),
            tpt: result.visits.iter().enumerate().filter(|(_, &v)| v > 0).map(|(c, &v)| (c, v)).collect(),
            total: result.total_visits,
            chosen: result.chosen.index(n),
            z: None,
            to_move: state.to_move(),
            provenance,
        }
    }

    pub fn position(&self) -> Result<BoardState> {
        BoardState::from_history(self.board_size, &self.moves)
    }

    /// Dense visit distribution over the cells.
    pub fn tpt_target(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.board_size * self.board_size];
        for &(c, v) in &self.tpt {
            t[c] = v as f64 / self.total as f64;
        }
        t
    }

    pub fn cat_target(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.board_size * self.board_size];
        t[self.chosen] = 1.0;
        t
    }

    pub fn target(&self, kind: TargetKind) -> Vec<f64> {
        match kind {
            TargetKind::Tpt => self.tpt_target(),
            TargetKind::Cat => self.cat_target(),
        }
    }

    pub fn to_example(&self, kind: TargetKind) -> Result<Example> {
        Ok(Example::from_state(&self.position()?, self.target(kind), self.z))
    }

    /// Checks the sample against its reconstructed position.
    pub fn validate(&self) -> Result<()> {
        let state = self.position()?;
        let bad = |why: &str| Err(ExitError::Dataset(format!("sample {:?}: {why}", self.provenance)));
        if state.is_terminal() {
            return bad("position is terminal");
        }
        if state.to_move() != self.to_move {
            return bad("side to move does not match the history");
        }
        if self.tpt.iter().map(|&(_, v)| v as u64).sum::<u64>() != self.total || self.total == 0 {
            return bad("visit counts do not sum to the total");
        }
        if self.tpt.iter().any(|&(c, _)| c >= state.num_cells() || !state.is_empty_cell(c)) {
            return bad("visits on an occupied cell");
        }
        let best = self.tpt.iter().map(|&(_, v)| v).max().unwrap_or(0);
        let first_best = self.tpt.iter().filter(|&&(_, v)| v == best).map(|&(c, _)| c).min();
        if first_best != Some(self.chosen) {
            return bad("chosen action is not the first most-visited move");
        }
        if let Some(z) = self.z {
            if !(0.0..=1.0).contains(&z) {
                return bad("value target outside [0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub board_size: usize,
    pub expert: String,
    pub exploration: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<TrainingSample>,
}

impl Dataset {
    pub fn new(board_size: usize, expert: impl Into<String>, exploration: impl Into<String>) -> Dataset {
        Dataset {
            header: DatasetHeader {
                format: DATASET_FORMAT.into(),
                version: DATASET_VERSION,
                board_size,
                expert: expert.into(),
                exploration: exploration.into(),
            },
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// First game id not used by any sample.
    pub fn next_game_id(&self) -> u64 {
        self.samples.iter().map(|s| s.provenance.game + 1).max().unwrap_or(0)
    }

    pub fn examples(&self, kind: TargetKind) -> Result<Vec<Example>> {
        self.samples.iter().map(|s| s.to_example(kind)).collect()
    }

    /// Validates every sample and the one-position-per-game rule.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for s in &self.samples {
            if s.board_size != self.header.board_size {
                return Err(ExitError::Dataset(format!("sample {:?} has board size {}", s.provenance, s.board_size)));
            }
            s.validate()?;
            if !seen.insert((s.provenance.iteration, s.provenance.game)) {
                return Err(ExitError::Dataset(format!("two samples from game {:?}", s.provenance)));
            }
        }
        Ok(())
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for s in &self.samples {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_from(input: impl BufRead) -> Result<Dataset> {
        let mut lines = input.lines();
        let header_line = lines.next().ok_or_else(|| ExitError::Format("empty dataset file".into()))??;
        let header: DatasetHeader = serde_json::from_str(&header_line)?;
        if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
            return Err(ExitError::Format(format!("unsupported dataset {} v{}", header.format, header.version)));
        }
        let mut samples = Vec::new();
        for line in lines {
            let line = line?;
            if !line.is_empty() {
                samples.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Dataset { header, samples })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        Dataset::read_from(BufReader::new(File::open(path)?))
    }
}

/// The tree-search expert: a search configuration plus the apprentice
/// guiding it, if any.
#[derive(Debug, Clone, Copy)]
pub struct Expert<'a> {
    pub search: &'a SearchConfig,
    pub network: Option<&'a Network>,
}

impl Expert<'_> {
    pub fn descriptor(&self) -> String {
        format!("{:?}-{}", self.search.mode, self.search.iterations).to_lowercase()
    }
}

/// Runs the expert on one position. Terminal positions are skipped.
pub fn label_with_expert(state: &BoardState, expert: &Expert, provenance: Provenance) -> Result<Option<TrainingSample>> {
    if state.is_terminal() {
        log::warn!("skipping terminal position {provenance:?}");
        return Ok(None);
    }
    let result = run_search(state, expert.search, expert.network)?;
    Ok(Some(TrainingSample::from_search(state, &result, provenance)))
}

/// A position waiting for its expert label, with the seed of its search.
#[derive(Debug, Clone)]
pub struct PositionTask {
    pub state: BoardState,
    pub provenance: Provenance,
    pub seed: u64,
}

/// Where new samples come from and how they are labelled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Generation {
    pub board_size: usize,
    pub iteration: u32,
    /// Lowest game id to use; ids already in the dataset are skipped too.
    pub first_game: u64,
    pub master_seed: u64,
    pub workers: usize,
    pub eval_batch: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GenerationStats {
    /// Network evaluations spent on exploration games and labels.
    pub evaluations: u64,
    pub mean_game_length: f64,
    pub mean_ply: f64,
    pub mean_eval_batch: f64,
}

/// Plays one exploration game per id and samples a position from each.
pub fn sample_tasks(explorer: &Explorer, games: std::ops::Range<u64>, gen: &Generation) -> Result<(Vec<PositionTask>, GenerationStats)> {
    let ids: Vec<u64> = games.collect();
    let drawn = par_map(&ids, gen.workers, |_, &game| {
        let mut rng = seed::rng(gen.master_seed, streams::EXPLORATION, game);
        sample_position(explorer, gen.board_size, &mut rng).map(|p| (game, p))
    });
    let mut stats = GenerationStats::default();
    let mut tasks = Vec::with_capacity(ids.len());
    for d in drawn {
        let (game, p) = d?;
        stats.evaluations += p.evaluations;
        stats.mean_game_length += p.game_length as f64;
        stats.mean_ply += p.state.ply() as f64;
        tasks.push(PositionTask {
            provenance: Provenance { iteration: gen.iteration, game, ply: p.state.ply() as u32 },
            seed: seed::derive(gen.master_seed, streams::LABEL, game),
            state: p.state,
        });
    }
    if !tasks.is_empty() {
        stats.mean_game_length /= tasks.len() as f64;
        stats.mean_ply /= tasks.len() as f64;
    }
    Ok((tasks, stats))
}

/// Appends `count` new expert-labelled samples drawn with `explorer`.
pub fn extend_dataset(dataset: &mut Dataset, explorer: &Explorer, expert: &Expert, count: usize, gen: &Generation) -> Result<GenerationStats> {
    let first = dataset.next_game_id().max(gen.first_game);
    let (tasks, mut stats) = sample_tasks(explorer, first..first + count as u64, gen)?;
    let labelled = generate_labels_parallel(&tasks, expert, gen.workers, gen.eval_batch)?;
    stats.evaluations += labelled.evaluations;
    stats.mean_eval_batch = labelled.mean_batch();
    dataset.samples.extend(labelled.samples.into_iter().flatten());
    Ok(stats)
}

/// `count` samples from games explored by a reduced-budget tree search.
pub fn build_initial_dataset(
    count: usize,
    exploration: &SearchConfig,
    expert: &Expert,
    gen: &Generation,
) -> Result<(Dataset, GenerationStats)> {
    let explorer = Explorer::Mcts { search: exploration, network: None };
    let mut dataset = Dataset::new(gen.board_size, expert.descriptor(), explorer.descriptor());
    let stats = extend_dataset(&mut dataset, &explorer, expert, count, gen)?;
    Ok((dataset, stats))
}

/// DAgger step: positions from the apprentice's own games, expert labels.
pub fn dagger_extend(dataset: &mut Dataset, apprentice: &Network, expert: &Expert, count: usize, gen: &Generation) -> Result<GenerationStats> {
    extend_dataset(dataset, &Explorer::Apprentice(apprentice), expert, count, gen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn sampled_ply_is_inside_the_game() {
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = sample_position(&Explorer::Random, 2, &mut rng).unwrap();
            assert!(p.state.ply() < p.game_length);
            assert!(!p.state.is_terminal());
        }
    }

    #[test]
    fn same_seed_same_position() {
        let draw = |s| sample_position(&Explorer::Random, 5, &mut ChaCha8Rng::seed_from_u64(s)).unwrap().state;
        assert_eq!(draw(3), draw(3));
    }

    #[test]
    fn one_iteration_expert_gives_one_hot_target() {
        let s = BoardState::new(3).unwrap();
        let cfg = SearchConfig::vanilla().with_iterations(1);
        let sample = label_with_expert(&s, &Expert { search: &cfg, network: None }, Provenance { iteration: 0, game: 0, ply: 0 })
            .unwrap()
            .unwrap();
        assert_eq!(sample.tpt, vec![(0, 1)]);
        assert_eq!(sample.tpt_target().iter().sum::<f64>(), 1.0);
        assert_eq!(sample.cat_target(), sample.tpt_target());
        sample.validate().unwrap();
    }

    #[test]
    fn terminal_positions_are_skipped() {
        let s = BoardState::from_history(2, &[0, 1, 2]).unwrap();
        assert!(s.is_terminal());
        let cfg = SearchConfig::vanilla().with_iterations(10);
        let p = Provenance { iteration: 0, game: 0, ply: 3 };
        assert!(label_with_expert(&s, &Expert { search: &cfg, network: None }, p).unwrap().is_none());
    }
}
