mod agent_spec;
mod play;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use exit_core::baseline_rl::Reinforcer;
use exit_core::config::RunConfig;
use exit_core::evaluation::{
    curve_table, fit_elo, play_match, read_records, training_curve, write_records, EloOptions, MatchConfig, Openings,
};
use exit_core::exit_loop::{run_exit, train_apprentice};
use exit_core::hex::Color;
use exit_core::imitation::{extend_dataset, Dataset, Expert, Explorer, Generation, TargetKind};
use exit_core::neural::{checkpoint, Heads};

use agent_spec::parse_agent;

#[derive(Parser)]
#[command(name = "hexit", version, about = "Expert iteration for the game of Hex")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML). Defaults to the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration used when --config is absent.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Master seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Where results go.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per core), overriding the configuration.
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            None => RunConfig::preset(&self.preset)?,
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(w) = self.workers {
            config.exit.workers = w;
            config.reinforce.workers = w;
        }
        config.validate()?;
        Ok(config)
    }

    fn out(&self, what: &str) -> Result<&Path> {
        self.out.as_deref().with_context(|| format!("--out is required ({what})"))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Tpt,
    Cat,
}

#[derive(Clone, Copy, ValueEnum)]
enum Side {
    Black,
    White,
}

#[derive(Subcommand)]
enum Command {
    /// Build a dataset of expert-labelled positions, or extend an existing one.
    SelfplayDataset {
        #[command(flatten)]
        common: Common,
        /// Positions to add.
        #[arg(long)]
        count: Option<usize>,
        /// Explore with this apprentice instead of a short tree search.
        #[arg(long)]
        apprentice: Option<PathBuf>,
        /// Network guiding the expert search.
        #[arg(long)]
        expert_net: Option<PathBuf>,
        /// Iteration recorded in the provenance of new samples.
        #[arg(long, default_value_t = 1)]
        iteration: u32,
    },
    /// Train an apprentice on one or more datasets.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true, num_args = 1..)]
        dataset: Vec<PathBuf>,
        #[arg(long, value_enum)]
        target: Option<Target>,
        /// Add value heads (every sample needs a value target).
        #[arg(long)]
        value: bool,
    },
    /// Run expert iteration, resuming if the run directory exists.
    Exit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Play one agent against another.
    Match {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        #[arg(long, default_value_t = 100)]
        games: usize,
        /// Every opening cell, both colours.
        #[arg(long, conflicts_with = "random_openings")]
        sweep: bool,
        /// Start every pair of games from this many random moves.
        #[arg(long)]
        random_openings: Option<usize>,
    },
    /// Fit Elo ratings to match records.
    Elo {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true, num_args = 1..)]
        records: Vec<PathBuf>,
        /// Virtual games per pair of opponents.
        #[arg(long, default_value_t = 0.0)]
        prior: f64,
        #[arg(long)]
        anchor: Option<String>,
    },
    /// Elo of every checkpoint of a run against evaluations spent.
    Curve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 20)]
        games: usize,
    },
    /// Policy-gradient training from a starting checkpoint.
    Reinforce {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        init: PathBuf,
        /// Stop once this many network evaluations are spent.
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Play against an agent in the terminal.
    Play {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        agent: String,
        #[arg(long, value_enum, default_value_t = Side::Black)]
        colour: Side,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::SelfplayDataset { common, count, apprentice, expert_net, iteration } => {
            let config = common.config()?;
            let out = common.out("dataset file")?;
            let apprentice = apprentice.map(|p| checkpoint::load(&p)).transpose()?;
            let expert_net = expert_net.map(|p| checkpoint::load(&p)).transpose()?;
            let mode = match &expert_net {
                None => exit_core::search::SearchMode::Vanilla,
                Some(n) if n.has_value_heads() => exit_core::search::SearchMode::PolicyValue,
                Some(_) => exit_core::search::SearchMode::Policy,
            };
            let expert = Expert { search: config.search.for_mode(mode), network: expert_net.as_ref() };
            let exploration = config.search.vanilla.clone().with_iterations(config.exit.exploration_iterations);
            let explorer = match &apprentice {
                Some(net) => Explorer::Apprentice(net),
                None => Explorer::Mcts { search: &exploration, network: None },
            };
            let mut dataset = if out.exists() {
                Dataset::load(out)?
            } else {
                Dataset::new(config.board_size, expert.descriptor(), explorer.descriptor())
            };
            if dataset.header.board_size != config.board_size {
                bail!("{} holds {1}x{1} positions", out.display(), dataset.header.board_size);
            }
            let gen = Generation {
                board_size: config.board_size,
                iteration,
                first_game: dataset.next_game_id(),
                master_seed: config.seed,
                workers: config.exit.workers,
                eval_batch: config.exit.eval_batch,
            };
            let count = count.unwrap_or(config.exit.moves_per_iteration);
            let stats = extend_dataset(&mut dataset, &explorer, &expert, count, &gen)?;
            dataset.save(out)?;
            println!(
                "{}: {} samples, {} evaluations, mean ply {:.1}",
                out.display(),
                dataset.len(),
                stats.evaluations,
                stats.mean_ply
            );
        }
        Command::Train { common, dataset, target, value } => {
            let mut config = common.config()?;
            let out = common.out("checkpoint file")?;
            if let Some(t) = target {
                config.exit.target = match t {
                    Target::Tpt => TargetKind::Tpt,
                    Target::Cat => TargetKind::Cat,
                };
            }
            let mut merged: Option<Dataset> = None;
            for path in &dataset {
                let d = Dataset::load(path).with_context(|| format!("reading {}", path.display()))?;
                match &mut merged {
                    None => merged = Some(d),
                    Some(m) => {
                        if m.header.board_size != d.header.board_size {
                            bail!("{} has a different board size", path.display());
                        }
                        m.samples.extend(d.samples);
                    }
                }
            }
            let merged = merged.expect("at least one dataset");
            if merged.header.board_size != config.board_size {
                bail!("datasets are {0}x{0} but the configuration is {1}x{1}", merged.header.board_size, config.board_size);
            }
            let heads = if value { Heads::PolicyValue } else { Heads::Policy };
            let trained = train_apprentice(&merged, &config, heads, 0)?;
            checkpoint::save(&trained.network, out)?;
            let r = &trained.report;
            println!(
                "{}: {} epochs, kept epoch {}, validation loss {:.4}",
                out.display(),
                r.epochs_run,
                r.restored_epoch,
                r.validation_losses.get(r.restored_epoch.saturating_sub(1)).copied().unwrap_or(f64::NAN)
            );
        }
        Command::Exit { common, iterations } => {
            let mut config = common.config()?;
            if let Some(i) = iterations {
                config.exit.max_iterations = i;
            }
            let root = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let dir = config.run_dir(&root);
            let manifest = run_exit(&config, &dir)?;
            for r in &manifest.iterations {
                println!(
                    "iteration {}: {} new samples, expert {:?}, val loss {:.4}, evaluations {}",
                    r.iteration, r.new_samples, r.expert_mode, r.validation_loss, r.total_evaluations
                );
            }
            println!("{}", dir.display());
        }
        Command::Match { common, a, b, games, sweep, random_openings } => {
            let config = common.config()?;
            let a = parse_agent(&a, &config)?;
            let b = parse_agent(&b, &config)?;
            let openings = match (sweep, random_openings) {
                (true, _) => Openings::Sweep,
                (false, Some(plies)) => Openings::Random { plies },
                (false, None) => Openings::None,
            };
            let match_config = MatchConfig { games, openings, seed: config.seed, workers: config.exit.workers };
            let report = play_match(&a, &b, &match_config)?;
            if let Some(out) = &common.out {
                write_records(&report.records, BufWriter::new(File::create(out)?))?;
            }
            println!("{} games, {} distinct", report.records.len(), report.distinct_games);
            for p in [&a, &b] {
                println!("{}\t{} wins\t{:.3}", p.id, report.wins(&p.id), report.win_rate(&p.id));
            }
            if report.degenerate {
                println!("warning: deterministic agents repeated most games; consider --random-openings");
            }
        }
        Command::Elo { common, records, prior, anchor } => {
            let mut all = Vec::new();
            for path in &records {
                let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
                all.extend(read_records(BufReader::new(file))?);
            }
            let options = EloOptions { prior_games: prior, anchor, ..EloOptions::default() };
            let table = fit_elo(&all, &options)?;
            emit(common.out.as_deref(), &table.to_text())?;
        }
        Command::Curve { common, run, games } => {
            let config = common.config()?;
            let points = training_curve(&run, games, config.seed, config.exit.workers)?;
            emit(common.out.as_deref(), &curve_table(&points))?;
        }
        Command::Reinforce { common, init, budget } => {
            let config = common.config()?;
            let out = common.out("checkpoint file")?;
            let start = checkpoint::load(&init)?;
            if start.board_size() != config.board_size {
                bail!("{} plays {1}x{1} but the configuration is {2}x{2}", init.display(), start.board_size(), config.board_size);
            }
            let mut learner = Reinforcer::new(start, config.reinforce.clone(), config.seed)?;
            let history = learner.run(budget)?;
            checkpoint::save(&learner.network, out)?;
            let wins: usize = history.iter().map(|h| h.wins).sum();
            let games: usize = history.iter().map(|h| h.games).sum();
            println!(
                "{}: {} updates, {} evaluations, win rate {:.3}",
                out.display(),
                learner.updates_done,
                learner.evaluations,
                wins as f64 / games.max(1) as f64
            );
        }
        Command::Play { common, agent, colour } => {
            let config = common.config()?;
            let agent = parse_agent(&agent, &config)?;
            let human = match colour {
                Side::Black => Color::Black,
                Side::White => Color::White,
            };
            let stdin = std::io::stdin().lock();
            match &common.out {
                Some(path) => {
                    play::play(&agent, human, config.board_size, config.seed, stdin, BufWriter::new(File::create(path)?))?;
                }
                None => {
                    play::play(&agent, human, config.board_size, config.seed, stdin, std::io::stdout().lock())?;
                }
            }
        }
    }
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => File::create(path)?.write_all(text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}
