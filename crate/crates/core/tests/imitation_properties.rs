use std::collections::HashSet;

use exit_core::evaluation::argmax;
use exit_core::hex::{BoardState, Move};
use exit_core::imitation::{
    build_initial_dataset, dagger_extend, label_with_expert, sample_position, Dataset, Expert, Explorer, Generation,
    Provenance, TargetKind,
};
use exit_core::neural::{Network, NetworkConfig};
use exit_core::search::SearchConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn generation(size: usize, iteration: u32) -> Generation {
    Generation { board_size: size, iteration, first_game: 0, master_seed: 11, workers: 2, eval_batch: 4 }
}

fn small_dataset(count: usize) -> Dataset {
    let search = SearchConfig::vanilla().with_iterations(60);
    let exploration = SearchConfig::vanilla().with_iterations(10);
    let expert = Expert { search: &search, network: None };
    build_initial_dataset(count, &exploration, &expert, &generation(3, 1)).unwrap().0
}

#[test]
fn zero_count_gives_an_empty_dataset() {
    assert!(small_dataset(0).is_empty());
}

#[test]
fn every_sample_comes_from_its_own_game() {
    let d = small_dataset(100);
    assert_eq!(d.len(), 100);
    d.validate().unwrap();
    let ids: HashSet<(u32, u64)> = d.samples.iter().map(|s| (s.provenance.iteration, s.provenance.game)).collect();
    assert_eq!(ids.len(), 100);
    for s in &d.samples {
        let total: f64 = s.tpt_target().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        // The chosen-action target is the argmax of the visit target.
        assert_eq!(argmax(&s.cat_target()), argmax(&s.tpt_target()));
        assert_eq!(s.chosen, argmax(&s.target(TargetKind::Tpt)));
    }
}

#[test]
fn dataset_files_round_trip_byte_for_byte() {
    let mut d = small_dataset(20);
    d.samples[3].z = Some(1.0);
    d.samples[4].z = Some(0.0);
    let mut first = Vec::new();
    d.write_to(&mut first).unwrap();
    let back = Dataset::read_from(first.as_slice()).unwrap();
    assert_eq!(back, d);
    let mut second = Vec::new();
    back.write_to(&mut second).unwrap();
    assert_eq!(first, second);
}

#[test]
fn dagger_extensions_use_fresh_games() {
    let apprentice = Network::new(NetworkConfig::desk(3).with_seed(4)).unwrap();
    let search = SearchConfig::policy().with_iterations(30);
    let expert = Expert { search: &search, network: Some(&apprentice) };
    let mut d = small_dataset(10);
    let original = d.clone();

    dagger_extend(&mut d, &apprentice, &expert, 0, &generation(3, 2)).unwrap();
    assert_eq!(d, original);

    dagger_extend(&mut d, &apprentice, &expert, 7, &generation(3, 2)).unwrap();
    dagger_extend(&mut d, &apprentice, &expert, 7, &generation(3, 3)).unwrap();
    assert_eq!(d.len(), 24);
    assert_eq!(&d.samples[..10], &original.samples[..]);
    let games: HashSet<u64> = d.samples.iter().map(|s| s.provenance.game).collect();
    assert_eq!(games.len(), 24);
    d.validate().unwrap();
}

#[test]
fn expert_label_takes_the_winning_move() {
    // Black has (0,1) and (1,0); (2,0) completes the column.
    let mut s = BoardState::new(3).unwrap();
    for (r, c) in [(0, 1), (1, 1), (1, 0), (2, 2)] {
        s.apply(Move::new(r, c)).unwrap();
    }
    let search = SearchConfig::vanilla().with_iterations(1000).with_seed(3);
    let expert = Expert { search: &search, network: None };
    let provenance = Provenance { iteration: 1, game: 0, ply: 4 };
    let sample = label_with_expert(&s, &expert, provenance).unwrap().unwrap();
    assert_eq!(sample.chosen, Move::new(2, 0).index(3));
    assert_eq!(sample.total, 1000);
    sample.validate().unwrap();
}

/// Wilson-Hilferty approximation of the upper 0.1% point of chi-square.
fn chi_square_critical(df: f64) -> f64 {
    let z = 3.09;
    let a = 2.0 / (9.0 * df);
    df * (1.0 - a + z * a.sqrt()).powi(3)
}

#[test]
fn sampled_plies_are_uniform_within_games() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let draws: Vec<(usize, usize)> = (0..10_000)
        .map(|_| {
            let p = sample_position(&Explorer::Random, 5, &mut rng).unwrap();
            (p.state.ply(), p.game_length)
        })
        .collect();
    let longest = draws.iter().map(|&(_, l)| l).max().unwrap();
    let mut observed = vec![0.0; longest];
    let mut expected = vec![0.0; longest];
    for &(ply, length) in &draws {
        assert!(ply < length);
        observed[ply] += 1.0;
        for e in &mut expected[..length] {
            *e += 1.0 / length as f64;
        }
    }
    // Pool the sparse tail so every bin expects at least five draws.
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut carry = (0.0, 0.0);
    for (o, e) in observed.iter().zip(&expected).rev() {
        carry.0 += o;
        carry.1 += e;
        if carry.1 >= 5.0 {
            bins.push(carry);
            carry = (0.0, 0.0);
        }
    }
    if let Some(last) = bins.last_mut() {
        last.0 += carry.0;
        last.1 += carry.1;
    }
    let chi2: f64 = bins.iter().map(|&(o, e)| (o - e) * (o - e) / e).sum();
    let df = (bins.len() - 1) as f64;
    println!("chi-square {chi2:.1} on {df} degrees of freedom");
    assert!(chi2 < chi_square_critical(df), "chi-square {chi2} df {df}");
}

#[test]
fn apprentice_positions_match_self_play_depth() {
    let apprentice = Network::new(NetworkConfig::desk(5).with_seed(9)).unwrap();
    let explorer = Explorer::Apprentice(&apprentice);

    // Average ply over every position of independent self-play games.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut ply_sum, mut positions) = (0.0, 0.0);
    for _ in 0..300 {
        let mut s = BoardState::new(5).unwrap();
        while !s.is_terminal() {
            ply_sum += s.ply() as f64;
            positions += 1.0;
            let (m, _) = explorer.sample_move(&s, &mut rng).unwrap();
            s.apply(m).unwrap();
        }
    }
    let self_play = ply_sum / positions;

    let search = SearchConfig::policy().with_iterations(20);
    let expert = Expert { search: &search, network: Some(&apprentice) };
    let mut d = Dataset::new(5, expert.descriptor(), explorer.descriptor());
    dagger_extend(&mut d, &apprentice, &expert, 300, &Generation { board_size: 5, ..generation(5, 2) }).unwrap();
    let sampled = d.samples.iter().map(|s| s.provenance.ply as f64).sum::<f64>() / d.len() as f64;
    println!("self-play mean ply {self_play:.2}, sampled {sampled:.2}");
    assert!((sampled - self_play).abs() <= 0.3 * self_play);
}
