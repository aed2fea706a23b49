//! Agent descriptions on the command line.
//!
//! ```text
//! random            uniform random mover
//! mcts[:N]          vanilla MCTS with N simulations
//! nmcts:CKPT[:N]    policy-guided MCTS
//! pvmcts:CKPT[:N]   policy+value-guided MCTS
//! greedy:CKPT       apprentice playing its most likely move
//! sample:CKPT       apprentice sampling from its policy
//! CKPT              same as greedy:CKPT
//! ```

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use exit_core::config::RunConfig;
use exit_core::evaluation::{Agent, Player};
use exit_core::neural::checkpoint;
use exit_core::search::SearchMode;

fn load(path: &str) -> Result<Arc<exit_core::neural::Network>> {
    let net = checkpoint::load(Path::new(path)).with_context(|| format!("loading checkpoint {path}"))?;
    Ok(Arc::new(net))
}

fn iterations(field: Option<&str>, default: usize) -> Result<usize> {
    match field {
        None => Ok(default),
        Some(s) => s.parse().with_context(|| format!("bad simulation count {s:?}")),
    }
}

pub fn parse_agent(spec: &str, config: &RunConfig) -> Result<Player> {
    let parts: Vec<&str> = spec.split(':').collect();
    let agent = match parts[0] {
        "random" if parts.len() == 1 => Agent::Random,
        "mcts" if parts.len() <= 2 => {
            let base = &config.search.vanilla;
            Agent::mcts(base.clone().with_iterations(iterations(parts.get(1).copied(), base.iterations)?))
        }
        kind @ ("nmcts" | "pvmcts") if (2..=3).contains(&parts.len()) => {
            let mode = if kind == "nmcts" { SearchMode::Policy } else { SearchMode::PolicyValue };
            let base = config.search.for_mode(mode);
            let net = load(parts[1])?;
            if mode == SearchMode::PolicyValue && !net.has_value_heads() {
                bail!("{} has no value heads; use nmcts instead", parts[1]);
            }
            Agent::n_mcts(base.clone().with_iterations(iterations(parts.get(2).copied(), base.iterations)?), net)
        }
        "greedy" if parts.len() == 2 => Agent::greedy(load(parts[1])?),
        "sample" if parts.len() == 2 => Agent::Apprentice { network: load(parts[1])?, greedy: false },
        _ if parts.len() == 1 && Path::new(spec).exists() => Agent::greedy(load(spec)?),
        _ => bail!("unrecognised agent {spec:?} (random, mcts[:N], nmcts:CKPT[:N], pvmcts:CKPT[:N], greedy:CKPT, sample:CKPT)"),
    };
    if let Some(n) = agent.board_size() {
        if n != config.board_size {
            bail!("agent {spec} plays {n}x{n} but the configuration is {0}x{0}", config.board_size);
        }
    }
    Ok(Player::new(spec, agent))
}
