use std::collections::BTreeSet;
use std::path::Path;

use exit_core::config::RunConfig;
use exit_core::exit_loop::{add_value_targets, assemble_training_set, generate_labels_parallel, run_exit, Manifest, Regime};
use exit_core::hex::{BoardState, Color, Move};
use exit_core::imitation::{label_with_expert, sample_tasks, Dataset, Expert, Explorer, Generation, Provenance};
use exit_core::neural::{Network, NetworkConfig};
use exit_core::search::SearchConfig;

fn tiny(iterations: usize) -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.name = "tiny".into();
    cfg.board_size = 3;
    cfg.seed = 5;
    cfg.network = NetworkConfig::desk(3);
    cfg.search = exit_core::config::SearchPresets::scaled(40, 3);
    cfg.exit.max_iterations = iterations;
    cfg.exit.moves_per_iteration = 20;
    cfg.exit.buffer_capacity = 40;
    cfg.exit.exploration_iterations = 10;
    cfg.exit.workers = 2;
    cfg.train.max_epochs = 3;
    cfg
}

fn read(dir: &Path, file: &str) -> Vec<u8> {
    std::fs::read(dir.join(file)).unwrap()
}

#[test]
fn every_reply_wins_so_the_value_target_is_one() {
    // Black (0,1) (1,1) (1,2), White (0,0) (0,2) (1,0): any Black move joins row 2.
    let mut s = BoardState::new(3).unwrap();
    for (r, c) in [(0, 1), (0, 0), (1, 1), (0, 2), (1, 2), (1, 0)] {
        s.apply(Move::new(r, c)).unwrap();
    }
    assert_eq!(s.to_move(), Color::Black);
    assert!(!s.is_terminal());
    for m in s.legal_moves() {
        assert_eq!(s.play(m).unwrap().winner(), Some(Color::Black));
    }
    let search = SearchConfig::vanilla().with_iterations(10);
    let expert = Expert { search: &search, network: None };
    let sample = label_with_expert(&s, &expert, Provenance { iteration: 1, game: 0, ply: 6 }).unwrap().unwrap();
    let apprentice = Network::new(NetworkConfig::desk(3).with_seed(1)).unwrap();
    for games in [1, 5] {
        for seed in 0..10 {
            let mut d = Dataset::new(3, "e", "x");
            d.samples.push(sample.clone());
            add_value_targets(&mut d, &apprentice, games, seed, 1).unwrap();
            assert_eq!(d.samples[0].z, Some(1.0));
        }
    }
}

#[test]
fn single_worker_single_batch_matches_sequential_labelling() {
    let apprentice = Network::new(NetworkConfig::desk(4).with_seed(2)).unwrap();
    let search = SearchConfig::policy().with_iterations(40);
    let expert = Expert { search: &search, network: Some(&apprentice) };
    let gen = Generation { board_size: 4, iteration: 1, first_game: 0, master_seed: 3, workers: 1, eval_batch: 1 };
    let (tasks, _) = sample_tasks(&Explorer::Random, 0..12, &gen).unwrap();
    let labelled = generate_labels_parallel(&tasks, &expert, 1, 1).unwrap();
    for (task, got) in tasks.iter().zip(&labelled.samples) {
        let seeded = search.clone().with_seed(task.seed);
        let one = Expert { search: &seeded, network: Some(&apprentice) };
        let want = label_with_expert(&task.state, &one, task.provenance).unwrap();
        assert_eq!(got, &want);
    }
    assert_eq!(labelled.largest_batch, 1);
}

#[test]
fn zero_iterations_writes_only_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let m = run_exit(&tiny(0), tmp.path()).unwrap();
    assert!(m.iterations.is_empty());
    let files: Vec<_> = std::fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files, vec![std::ffi::OsString::from("manifest")]);
    assert_eq!(Manifest::load(tmp.path()).unwrap().config, tiny(0));
}

#[test]
fn resuming_after_an_interruption_reproduces_the_run() {
    let straight = tempfile::tempdir().unwrap();
    run_exit(&tiny(3), straight.path()).unwrap();

    let resumed = tempfile::tempdir().unwrap();
    run_exit(&tiny(1), resumed.path()).unwrap();
    // A half-written dataset from the interrupted second iteration.
    std::fs::write(resumed.path().join("dataset_2"), b"{\"format\":").unwrap();
    let m = run_exit(&tiny(3), resumed.path()).unwrap();
    assert_eq!(m.iterations.len(), 3);

    for file in ["manifest", "ckpt_1", "ckpt_2", "ckpt_3", "dataset_1", "dataset_2", "dataset_3"] {
        assert_eq!(read(straight.path(), file), read(resumed.path(), file), "{file} differs");
    }
    // Every dataset listed in the manifest reloads and validates.
    for r in &m.iterations {
        Dataset::load(&resumed.path().join(&r.dataset)).unwrap().validate().unwrap();
    }
}

#[test]
fn resuming_with_another_configuration_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    run_exit(&tiny(1), tmp.path()).unwrap();
    let mut other = tiny(2);
    other.seed = 6;
    assert!(run_exit(&other, tmp.path()).is_err());
}

#[test]
fn online_training_sets_are_the_union_of_iterations() {
    let mut cfg = tiny(3);
    cfg.exit.regime = Regime::OnlineExponential;
    cfg.exit.moves_per_iteration = 10;
    let tmp = tempfile::tempdir().unwrap();
    let m = run_exit(&cfg, tmp.path()).unwrap();
    let history: Vec<Dataset> = m.iterations.iter().map(|r| Dataset::load(&tmp.path().join(&r.dataset)).unwrap()).collect();
    // 10 labels, then 10% growth rounded up: 1, then 2.
    assert_eq!(history.iter().map(Dataset::len).collect::<Vec<_>>(), vec![10, 1, 2]);
    for i in 1..=history.len() {
        let set = assemble_training_set(&history[..i], &cfg.exit).unwrap();
        let got: BTreeSet<Provenance> = set.samples.iter().map(|s| s.provenance).collect();
        let want: BTreeSet<Provenance> = history[..i].iter().flat_map(|d| d.samples.iter().map(|s| s.provenance)).collect();
        assert_eq!(got, want);
        assert_eq!(m.iterations[i - 1].training_samples, want.len());
    }
}
