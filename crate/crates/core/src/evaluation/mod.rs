//! Agents, matches, Elo ratings and training curves.

mod elo;
mod matches;

pub use elo::{fit_elo, fit_elo_games, EloOptions, EloTable};
pub use matches::{play_match, play_match_sized, read_records, write_records, MatchConfig, MatchRecord, MatchReport, Openings};

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ExitError, Result};
use crate::exit_loop::Manifest;
use crate::hex::{BoardState, Move};
use crate::neural::{checkpoint, Network};
use crate::search::{run_search, SearchConfig};

/// Something that picks moves.
#[derive(Debug, Clone)]
pub enum Agent {
    Random,
    /// Tree search; guided by `network` in the policy modes.
    Mcts { search: SearchConfig, network: Option<Arc<Network>> },
    /// Bare apprentice: most likely move when `greedy`, else a softmax sample.
    Apprentice { network: Arc<Network>, greedy: bool },
}

impl Agent {
    pub fn mcts(search: SearchConfig) -> Agent {
        Agent::Mcts { search, network: None }
    }

    pub fn n_mcts(search: SearchConfig, network: Arc<Network>) -> Agent {
        Agent::Mcts { search, network: Some(network) }
    }

    pub fn greedy(network: Arc<Network>) -> Agent {
        Agent::Apprentice { network, greedy: true }
    }

    pub fn board_size(&self) -> Option<usize> {
        match self {
            Agent::Random | Agent::Mcts { network: None, .. } => None,
            Agent::Mcts { network: Some(net), .. } | Agent::Apprentice { network: net, .. } => Some(net.board_size()),
        }
    }

    /// Whether the agent can play differently from the same position.
    pub fn is_stochastic(&self) -> bool {
        !matches!(self, Agent::Apprentice { greedy: true, .. })
    }

    /// Chooses a move; `seed` drives any randomness. Also returns the
    /// network evaluations spent.
    pub fn choose(&self, state: &BoardState, seed: u64) -> Result<(Move, u64)> {
        let n = state.size();
        match self {
            Agent::Random => {
                let legal = state.legal_moves();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok((legal[rng.random_range(0..legal.len())], 0))
            }
            Agent::Mcts { search, network } => {
                let result = run_search(state, &search.clone().with_seed(seed), network.as_deref())?;
                Ok((result.chosen, result.evaluations))
            }
            Agent::Apprentice { network, greedy } => {
                let out = network.evaluate(state, 1.0)?;
                let cell = if *greedy {
                    argmax(&out.policy)
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    crate::imitation::sample_index(&out.policy, &mut rng)?
                };
                Ok((Move::from_index(cell, n), 1))
            }
        }
    }
}

/// Index of the largest value, earliest on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// An agent with a name for records and rating tables.
#[derive(Debug, Clone)]
pub struct Player {
    pub id: String,
    pub agent: Agent,
}

impl Player {
    pub fn new(id: impl Into<String>, agent: Agent) -> Player {
        Player { id: id.into(), agent }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub evaluations: u64,
    pub elo: f64,
}

/// Round robin between the greedy apprentices of a run, rated by Elo and
/// placed on the network-evaluation time axis.
pub fn training_curve(dir: &Path, games_per_pair: usize, seed: u64, workers: usize) -> Result<Vec<CurvePoint>> {
    let manifest = Manifest::load(dir)?;
    if manifest.iterations.is_empty() {
        return Err(ExitError::Config(format!("{} has no checkpoints", dir.display())));
    }
    let players: Vec<Player> = manifest
        .iterations
        .iter()
        .map(|r| Ok(Player::new(r.checkpoint.clone(), Agent::greedy(Arc::new(checkpoint::load(&dir.join(&r.checkpoint))?)))))
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    for i in 0..players.len() {
        for j in i + 1..players.len() {
            let cfg = MatchConfig {
                games: games_per_pair,
                openings: Openings::Random { plies: 2 },
                seed: crate::seed::derive(seed, (i * players.len() + j) as u64, 0),
                workers,
            };
            records.extend(play_match(&players[i], &players[j], &cfg)?.records);
        }
    }
    let ratings = if players.len() == 1 {
        vec![0.0]
    } else {
        let table = fit_elo(&records, &EloOptions { prior_games: 1.0, anchor: Some(players[0].id.clone()), ..EloOptions::default() })?;
        players.iter().map(|p| table.rating(&p.id).unwrap_or(0.0)).collect()
    };
    Ok(manifest
        .iterations
        .iter()
        .zip(ratings)
        .map(|(r, elo)| CurvePoint { iteration: r.iteration, evaluations: r.total_evaluations, elo })
        .collect())
}

/// Two-column table: network evaluations, Elo.
pub fn curve_table(points: &[CurvePoint]) -> String {
    let mut out = String::from("# evaluations\telo\n");
    for p in points {
        out.push_str(&format!("{}\t{:.2}\n", p.evaluations, p.elo));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vanilla_move_costs_no_evaluations() {
        let s = BoardState::new(5).unwrap();
        let (_, evals) = Agent::mcts(SearchConfig::vanilla().with_iterations(200)).choose(&s, 1).unwrap();
        assert_eq!(evals, 0);
    }

    #[test]
    fn argmax_prefers_earliest() {
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
        assert_eq!(argmax(&[0.0]), 0);
    }
}
