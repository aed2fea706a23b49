use exit_core::baseline_rl::{ReinforceConfig, Reinforcer};
use exit_core::evaluation::argmax;
use exit_core::hex::{BoardState, Color};
use exit_core::neural::{Network, NetworkConfig};

/// Whether the side to move wins with perfect play.
fn mover_wins(state: &BoardState) -> bool {
    state.legal_moves().into_iter().any(|m| {
        let next = state.play(m).unwrap();
        match next.winner() {
            Some(w) => w == state.to_move(),
            None => !mover_wins(&next),
        }
    })
}

fn winning_openings() -> Vec<usize> {
    let empty = BoardState::new(2).unwrap();
    empty
        .legal_moves()
        .into_iter()
        .filter(|&m| {
            let next = empty.play(m).unwrap();
            next.winner() == Some(Color::Black) || !mover_wins(&next)
        })
        .map(|m| m.index(2))
        .collect()
}

#[test]
fn two_by_two_has_two_winning_openings() {
    assert_eq!(winning_openings(), vec![1, 2]);
}

#[test]
fn reinforce_finds_a_winning_opening_against_a_frozen_opponent() {
    let winning = winning_openings();
    let config = ReinforceConfig {
        updates: 150,
        games_per_update: 32,
        learning_rate: 0.05,
        pool_size: 1,
        snapshot_every: 0,
        workers: 1,
        ..ReinforceConfig::desk()
    };
    let seeds = 20;
    let mut found = 0;
    for seed in 0..seeds {
        let start = Network::new(NetworkConfig::desk(2).with_seed(seed)).unwrap();
        let mut learner = Reinforcer::new(start.clone(), config.clone(), seed).unwrap();
        learner.run(None).unwrap();
        assert_eq!(learner.pool.len(), 1);
        assert_eq!(learner.pool[0].params(), start.params());
        let policy = learner.network.evaluate(&BoardState::new(2).unwrap(), 1.0).unwrap().policy;
        if winning.contains(&argmax(&policy)) {
            found += 1;
        }
    }
    println!("{found}/{seeds} runs open with a winning move");
    assert!(found * 100 >= 95 * seeds as usize);
}
