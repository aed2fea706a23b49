//! Self-play REINFORCE with a moving-average baseline, playing against a
//! pool of its own earlier checkpoints.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ExitError, Result};
use crate::hex::{BoardState, Color};
use crate::imitation::Explorer;
use crate::neural::{Example, Network};
use crate::parallel::par_map;
use crate::seed::{self, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReinforceConfig {
    pub updates: usize,
    pub games_per_update: usize,
    pub learning_rate: f64,
    /// Most checkpoints kept as opponents (oldest dropped first).
    pub pool_size: usize,
    /// Add the current policy to the pool every this many updates; 0 keeps
    /// the pool frozen at the starting network.
    pub snapshot_every: usize,
    pub baseline_decay: f64,
    pub initial_baseline: f64,
    pub workers: usize,
}

impl ReinforceConfig {
    pub fn paper() -> Self {
        ReinforceConfig {
            updates: 10_000,
            games_per_update: 128,
            learning_rate: 0.001,
            pool_size: 20,
            snapshot_every: 500,
            baseline_decay: 0.9,
            initial_baseline: 0.5,
            workers: 0,
        }
    }

    pub fn desk() -> Self {
        ReinforceConfig { updates: 200, games_per_update: 32, learning_rate: 0.003, snapshot_every: 20, ..ReinforceConfig::paper() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pool_size == 0 {
            return Err(ExitError::Config("opponent pool must hold at least one network".into()));
        }
        if self.games_per_update == 0 {
            return Err(ExitError::Config("games_per_update must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(ExitError::Config("baseline_decay must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One move of the learner: the position, the action and the final result
/// from the learner's perspective.
#[derive(Debug, Clone)]
pub struct Step {
    pub state: BoardState,
    pub action: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub games: usize,
    pub wins: usize,
    pub baseline: f64,
    pub evaluations: u64,
}

/// Plays one game between `learner` and `opponent`, both sampling from
/// their softmax. Returns the learner's steps and the evaluations spent.
pub fn play_training_game(
    learner: &Network,
    opponent: &Network,
    learner_color: Color,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Step>, u64)> {
    let mut state = BoardState::new(learner.board_size())?;
    let mut steps = Vec::new();
    let mut evaluations = 0;
    while !state.is_terminal() {
        let mine = state.to_move() == learner_color;
        let net = if mine { learner } else { opponent };
        let (m, e) = Explorer::Apprentice(net).sample_move(&state, rng)?;
        evaluations += e;
        if mine {
            steps.push(Step { state: state.clone(), action: m.index(state.size()), reward: 0.0 });
        }
        state.apply(m)?;
    }
    let reward = if state.winner() == Some(learner_color) { 1.0 } else { 0.0 };
    steps.iter_mut().for_each(|s| s.reward = reward);
    Ok((steps, evaluations))
}

/// Gradient step on -mean_t (z - b) log pi(a_t | s_t), plain SGD.
pub fn apply_policy_gradient(net: &mut Network, steps: &[Step], baseline: f64, learning_rate: f64) -> Result<()> {
    if steps.is_empty() {
        return Ok(());
    }
    let cells = net.board_size() * net.board_size();
    let examples: Vec<Example> = steps
        .iter()
        .map(|s| {
            let mut target = vec![0.0; cells];
            target[s.action] = s.reward - baseline;
            Example::from_state(&s.state, target, None)
        })
        .collect();
    let refs: Vec<&Example> = examples.iter().collect();
    let (_, grad) = net.loss_and_gradient_refs(&refs, 1.0)?;
    net.params_mut().add_scaled(&grad, -learning_rate);
    net.enforce_hex_mask();
    if !net.params().all_finite() {
        return Err(ExitError::Network("REINFORCE update diverged".into()));
    }
    Ok(())
}

/// The learner, its baseline and its opponent pool.
#[derive(Debug, Clone)]
pub struct Reinforcer {
    pub network: Network,
    pub baseline: f64,
    pub pool: VecDeque<Network>,
    pub updates_done: usize,
    pub games_played: u64,
    pub evaluations: u64,
    config: ReinforceConfig,
    seed: u64,
}

impl Reinforcer {
    pub fn new(warm_start: Network, config: ReinforceConfig, seed: u64) -> Result<Reinforcer> {
        config.validate()?;
        if warm_start.has_value_heads() {
            return Err(ExitError::Config("REINFORCE trains a policy-only network".into()));
        }
        let pool = VecDeque::from([warm_start.clone()]);
        Ok(Reinforcer {
            network: warm_start,
            baseline: config.initial_baseline,
            pool,
            updates_done: 0,
            games_played: 0,
            evaluations: 0,
            config,
            seed,
        })
    }

    pub fn config(&self) -> &ReinforceConfig {
        &self.config
    }

    /// Plays a batch of games against pool opponents and applies one update.
    pub fn update(&mut self) -> Result<UpdateStats> {
        let first = self.games_played;
        let ids: Vec<u64> = (first..first + self.config.games_per_update as u64).collect();
        let (learner, pool) = (&self.network, &self.pool);
        let seed = self.seed;
        let games = par_map(&ids, self.config.workers, |_, &g| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, streams::REINFORCE, g));
            let opponent = &pool[rng.random_range(0..pool.len())];
            let color = if g % 2 == 0 { Color::Black } else { Color::White };
            play_training_game(learner, opponent, color, &mut rng)
        });
        let mut steps = Vec::new();
        let mut stats = UpdateStats { games: ids.len(), wins: 0, baseline: self.baseline, evaluations: 0 };
        for game in games {
            let (s, e) = game?;
            stats.evaluations += e;
            if s.first().is_some_and(|st| st.reward > 0.0) {
                stats.wins += 1;
            }
            steps.extend(s);
        }
        apply_policy_gradient(&mut self.network, &steps, self.baseline, self.config.learning_rate)?;
        let mean_reward = stats.wins as f64 / stats.games as f64;
        self.baseline = self.config.baseline_decay * self.baseline + (1.0 - self.config.baseline_decay) * mean_reward;
        self.games_played += ids.len() as u64;
        self.evaluations += stats.evaluations;
        self.updates_done += 1;
        if self.config.snapshot_every > 0 && self.updates_done.is_multiple_of(self.config.snapshot_every) {
            self.pool.push_back(self.network.clone());
            while self.pool.len() > self.config.pool_size {
                self.pool.pop_front();
            }
        }
        Ok(stats)
    }

    /// Runs updates until `config.updates` are done or the evaluation
    /// budget is spent (checked between updates).
    pub fn run(&mut self, evaluation_budget: Option<u64>) -> Result<Vec<UpdateStats>> {
        let mut history = Vec::new();
        while self.updates_done < self.config.updates {
            if evaluation_budget.is_some_and(|b| self.evaluations >= b) {
                break;
            }
            history.push(self.update()?);
        }
        Ok(history)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::NetworkConfig;

    fn steps(net: &Network, reward: f64) -> Vec<Step> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mut s, _) = play_training_game(net, net, Color::Black, &mut rng).unwrap();
        s.iter_mut().for_each(|x| x.reward = reward);
        s
    }

    #[test]
    fn zero_advantage_leaves_parameters_unchanged() {
        let mut net = Network::new(NetworkConfig::desk(3).with_seed(2)).unwrap();
        let before = net.params().clone();
        let s = steps(&net, 0.5);
        apply_policy_gradient(&mut net, &s, 0.5, 0.1).unwrap();
        assert_eq!(net.params(), &before);
    }

    #[test]
    fn winning_games_follow_the_imitation_gradient() {
        let net = Network::new(NetworkConfig::desk(3).with_seed(3)).unwrap();
        let s = steps(&net, 1.0);
        let cat: Vec<Example> = s
            .iter()
            .map(|st| {
                let mut t = vec![0.0; 9];
                t[st.action] = 1.0;
                Example::from_state(&st.state, t, None)
            })
            .collect();
        let (_, g_cat) = net.loss_and_gradient(&cat).unwrap();
        let mut stepped = net.clone();
        apply_policy_gradient(&mut stepped, &s, 0.0, 0.5).unwrap();
        let mut expected = net.params().clone();
        expected.add_scaled(&g_cat, -0.5);
        assert!(stepped.params().max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn pool_is_bounded_fifo() {
        let net = Network::new(NetworkConfig::desk(2)).unwrap();
        let cfg = ReinforceConfig { updates: 5, games_per_update: 2, pool_size: 2, snapshot_every: 1, workers: 1, ..ReinforceConfig::desk() };
        let mut r = Reinforcer::new(net, cfg, 0).unwrap();
        r.run(None).unwrap();
        assert_eq!(r.pool.len(), 2);
        assert_eq!(r.pool.back().unwrap().params(), r.network.params());
        assert!(r.evaluations > 0);
    }
}
