use exit_core::config::RunConfig;
use exit_core::evaluation::{
    fit_elo_games, play_match_sized, training_curve, Agent, EloOptions, MatchConfig, Openings, Player,
};
use exit_core::exit_loop::run_exit;
use exit_core::neural::NetworkConfig;
use exit_core::search::SearchConfig;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Round robin where `a` beats `b` with the logistic Elo probability.
fn synthetic_games(ratings: &[f64], games_per_pair: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut games = Vec::new();
    for i in 0..ratings.len() {
        for j in i + 1..ratings.len() {
            let p = 1.0 / (1.0 + 10f64.powf((ratings[j] - ratings[i]) / 400.0));
            for _ in 0..games_per_pair {
                let (w, l) = if rng.random::<f64>() < p { (i, j) } else { (j, i) };
                games.push((format!("a{w}"), format!("a{l}")));
            }
        }
    }
    games
}

fn fitted(games: &[(String, String)], n: usize) -> Vec<f64> {
    let options = EloOptions { anchor: Some("a0".into()), ..EloOptions::default() };
    let table = fit_elo_games(games, &options).unwrap();
    assert!(table.converged);
    (0..n).map(|i| table.rating(&format!("a{i}")).unwrap()).collect()
}

#[test]
fn five_agent_tournament_is_recovered() {
    let truth = [0.0, 120.0, -80.0, 300.0, 40.0];
    for seed in 0..5 {
        let got = fitted(&synthetic_games(&truth, 1000, seed), truth.len());
        for (g, t) in got.iter().zip(&truth) {
            assert!((g - t).abs() <= 25.0, "seed {seed}: fitted {got:?} truth {truth:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(24) })]

    #[test]
    fn shifting_true_ratings_shifts_the_fit(shift in -500.0f64..500.0, seed in any::<u64>()) {
        let truth = [0.0, 150.0, -100.0];
        let moved: Vec<f64> = truth.iter().map(|r| r + shift).collect();
        let base = fitted(&synthetic_games(&truth, 200, seed), 3);
        // Anchored at agent 0, whose true rating is `shift` after the move.
        let again: Vec<f64> = fitted(&synthetic_games(&moved, 200, seed), 3).iter().map(|r| r + shift).collect();
        for (a, b) in base.iter().zip(&again) {
            prop_assert!((a + shift - b).abs() < 1e-6);
        }
    }

    #[test]
    fn sweeps_balance_colours(size in 2usize..=4, seed in any::<u64>()) {
        let a = Player::new("search", Agent::mcts(SearchConfig::vanilla().with_iterations(8)));
        let b = Player::new("random", Agent::Random);
        let config = MatchConfig { games: 0, openings: Openings::Sweep, seed, workers: 1 };
        let report = play_match_sized(&a, &b, &config, Some(size)).unwrap();
        prop_assert_eq!(report.records.len(), 2 * size * size);
        for id in ["search", "random"] {
            prop_assert_eq!(report.records.iter().filter(|r| r.black == id).count(), size * size);
            prop_assert_eq!(report.records.iter().filter(|r| r.white == id).count(), size * size);
        }
        for cell in 0..size * size {
            let games: Vec<_> = report.records.iter().filter(|r| r.opening == [cell]).collect();
            prop_assert_eq!(games.len(), 2);
            prop_assert!(games[0].black != games[1].black);
        }
    }
}

#[test]
fn one_checkpoint_sits_at_rating_zero() {
    let mut cfg = RunConfig::desk();
    cfg.board_size = 3;
    cfg.network = NetworkConfig::desk(3);
    cfg.search = exit_core::config::SearchPresets::scaled(30, 3);
    cfg.exit.max_iterations = 1;
    cfg.exit.moves_per_iteration = 20;
    cfg.exit.exploration_iterations = 10;
    cfg.train.max_epochs = 2;
    let tmp = tempfile::tempdir().unwrap();
    let manifest = run_exit(&cfg, tmp.path()).unwrap();
    let curve = training_curve(tmp.path(), 10, 1, 1).unwrap();
    assert_eq!(curve.len(), 1);
    assert_eq!(curve[0].elo, 0.0);
    assert_eq!(curve[0].iteration, 1);
    assert_eq!(curve[0].evaluations, manifest.iterations[0].total_evaluations);
}
