use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Player;
use crate::error::{ExitError, Result};
use crate::hex::{BoardState, Color};
use crate::parallel::par_map;
use crate::seed::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Openings {
    /// Games start from the empty board, colours alternating.
    None,
    /// Every first move once with each agent as Black (2 n^2 games).
    Sweep,
    /// Pairs of games from the same random opening, colours swapped.
    Random { plies: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchConfig {
    /// Ignored by the sweep, which fixes its own game count.
    pub games: usize,
    pub openings: Openings,
    pub seed: u64,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub game: usize,
    pub black: String,
    pub white: String,
    pub opening: Vec<usize>,
    pub winner: Color,
    pub winner_id: String,
    pub plies: usize,
    pub moves: Vec<usize>,
    pub mean_move_micros: u64,
    pub evaluations_black: u64,
    pub evaluations_white: u64,
}

impl MatchRecord {
    pub fn loser_id(&self) -> &str {
        if self.winner_id == self.black {
            &self.white
        } else {
            &self.black
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchReport {
    pub records: Vec<MatchRecord>,
    pub distinct_games: usize,
    /// Set when at least half the games repeat another game move for move.
    pub degenerate: bool,
}

impl MatchReport {
    pub fn wins(&self, id: &str) -> usize {
        self.records.iter().filter(|r| r.winner_id == id).count()
    }

    pub fn win_rate(&self, id: &str) -> f64 {
        self.wins(id) as f64 / self.records.len() as f64
    }

    pub fn evaluations(&self, id: &str) -> u64 {
        self.records
            .iter()
            .map(|r| if r.black == id { r.evaluations_black } else if r.white == id { r.evaluations_white } else { 0 })
            .sum()
    }
}

struct GameSpec {
    a_black: bool,
    opening: Vec<usize>,
}

fn random_opening(size: usize, plies: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    loop {
        let mut s = BoardState::new(size)?;
        for _ in 0..plies {
            let legal = s.legal_moves();
            if legal.is_empty() {
                break;
            }
            s.apply(legal[rng.random_range(0..legal.len())])?;
        }
        if !s.is_terminal() {
            return Ok(s.history_indices());
        }
    }
}

fn board_size(a: &Player, b: &Player, fallback: Option<usize>) -> Result<usize> {
    match (a.agent.board_size(), b.agent.board_size()) {
        (Some(x), Some(y)) if x != y => {
            Err(ExitError::Config(format!("{} plays {x}x{x} but {} plays {y}x{y}", a.id, b.id)))
        }
        (Some(x), _) | (_, Some(x)) => Ok(x),
        (None, None) => fallback.ok_or_else(|| ExitError::Config("no agent fixes the board size".into())),
    }
}

/// Plays a match between `a` and `b`. Results depend only on the agents and `config.seed`.
pub fn play_match(a: &Player, b: &Player, config: &MatchConfig) -> Result<MatchReport> {
    play_match_sized(a, b, config, None)
}

/// As [`play_match`], with a board size for agents that accept any size.
pub fn play_match_sized(a: &Player, b: &Player, config: &MatchConfig, size: Option<usize>) -> Result<MatchReport> {
    if a.id == b.id {
        return Err(ExitError::Config(format!("both players are called {}", a.id)));
    }
    let n = board_size(a, b, size)?;
    if let Some(s) = size.filter(|&s| s != n) {
        return Err(ExitError::Config(format!("agents play {n}x{n}, match asked for {s}x{s}")));
    }
    let specs: Vec<GameSpec> = match config.openings {
        Openings::None => (0..config.games).map(|g| GameSpec { a_black: g % 2 == 0, opening: vec![] }).collect(),
        Openings::Sweep => (0..n * n)
            .flat_map(|cell| [true, false].map(|a_black| GameSpec { a_black, opening: vec![cell] }))
            .collect(),
        Openings::Random { plies } => (0..config.games)
            .map(|g| {
                let mut rng = seed::rng(config.seed, streams::MATCH, (g / 2) as u64);
                Ok(GameSpec { a_black: g % 2 == 0, opening: random_opening(n, plies, &mut rng)? })
            })
            .collect::<Result<_>>()?,
    };
    let records = par_map(&specs, config.workers, |g, spec| {
        let (black, white) = if spec.a_black { (a, b) } else { (b, a) };
        play_game(g, black, white, n, &spec.opening, seed::derive(config.seed, streams::MATCH ^ 0xff, g as u64))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let distinct: HashSet<(&str, &[usize])> = records.iter().map(|r| (r.black.as_str(), r.moves.as_slice())).collect();
    let distinct_games = distinct.len();
    Ok(MatchReport { degenerate: records.len() > 1 && distinct_games * 2 <= records.len(), distinct_games, records })
}

fn play_game(game: usize, black: &Player, white: &Player, n: usize, opening: &[usize], game_seed: u64) -> Result<MatchRecord> {
    let mut state = BoardState::from_history(n, opening)?;
    let mut evaluations = [0u64; 2];
    let mut micros = 0u128;
    let mut agent_moves = 0u128;
    while !state.is_terminal() {
        let player = if state.to_move() == Color::Black { black } else { white };
        let started = Instant::now();
        let (m, e) = player.agent.choose(&state, seed::derive(game_seed, state.ply() as u64, 0))?;
        micros += started.elapsed().as_micros();
        agent_moves += 1;
        evaluations[state.to_move().index()] += e;
        state.apply(m)?;
    }
    let winner = state.winner().expect("finished game has a winner");
    Ok(MatchRecord {
        game,
        black: black.id.clone(),
        white: white.id.clone(),
        opening: opening.to_vec(),
        winner,
        winner_id: if winner == Color::Black { black.id.clone() } else { white.id.clone() },
        plies: state.ply(),
        moves: state.history_indices(),
        mean_move_micros: (micros / agent_moves.max(1)) as u64,
        evaluations_black: evaluations[Color::Black.index()],
        evaluations_white: evaluations[Color::White.index()],
    })
}

/// One JSON record per line.
pub fn write_records(records: &[MatchRecord], mut out: impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records(input: impl BufRead) -> Result<Vec<MatchRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::Agent;
    use crate::neural::{Network, NetworkConfig};
    use crate::search::SearchConfig;
    use std::sync::Arc;

    fn cfg(games: usize, openings: Openings) -> MatchConfig {
        MatchConfig { games, openings, seed: 5, workers: 1 }
    }

    #[test]
    fn sweep_covers_every_opening_with_both_colours() {
        let a = Player::new("a", Agent::Random);
        let b = Player::new("b", Agent::Random);
        let r = play_match_sized(&a, &b, &cfg(0, Openings::Sweep), Some(5)).unwrap();
        assert_eq!(r.records.len(), 50);
        for cell in 0..25 {
            let games: Vec<_> = r.records.iter().filter(|g| g.opening == [cell]).collect();
            assert_eq!(games.len(), 2);
            assert_ne!(games[0].black, games[1].black);
        }
        assert_eq!(r.records.iter().filter(|g| g.black == "a").count(), 25);
    }

    #[test]
    fn deterministic_agents_make_a_degenerate_match() {
        let net = Arc::new(Network::new(NetworkConfig::desk(3).with_seed(1)).unwrap());
        let a = Player::new("a", Agent::greedy(net.clone()));
        let b = Player::new("b", Agent::greedy(net));
        let r = play_match(&a, &b, &cfg(10, Openings::None)).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.distinct_games, 2);
        let r = play_match(&Player::new("x", Agent::Random), &Player::new("y", Agent::Random), &cfg(10, Openings::None));
        assert!(r.is_err());
    }

    #[test]
    fn matches_are_reproducible_and_round_trip() {
        let a = Player::new("mcts", Agent::mcts(SearchConfig::vanilla().with_iterations(30)));
        let b = Player::new("random", Agent::Random);
        let one = play_match_sized(&a, &b, &cfg(6, Openings::Random { plies: 2 }), Some(4)).unwrap();
        let two = play_match_sized(&a, &b, &MatchConfig { workers: 3, ..cfg(6, Openings::Random { plies: 2 }) }, Some(4)).unwrap();
        let strip = |r: &MatchReport| r.records.iter().map(|g| (g.moves.clone(), g.winner)).collect::<Vec<_>>();
        assert_eq!(strip(&one), strip(&two));
        assert_eq!(one.records[0].opening, one.records[1].opening);
        assert_eq!(one.records[0].opening.len(), 2);
        let mut bytes = Vec::new();
        write_records(&one.records, &mut bytes).unwrap();
        let back = read_records(bytes.as_slice()).unwrap();
        assert_eq!(back, one.records);
        let mut again = Vec::new();
        write_records(&back, &mut again).unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn incompatible_sizes_are_rejected() {
        let a = Player::new("a", Agent::greedy(Arc::new(Network::new(NetworkConfig::desk(3)).unwrap())));
        let b = Player::new("b", Agent::greedy(Arc::new(Network::new(NetworkConfig::desk(4)).unwrap())));
        assert!(matches!(play_match(&a, &b, &cfg(2, Openings::None)), Err(ExitError::Config(_))));
    }
}
