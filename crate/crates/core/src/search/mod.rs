//! Monte Carlo tree search with RAVE and network-guided bonuses.
//!
//! Every edge stores its statistics from the point of view of the player
//! who takes the action, so the tree policy maximises at every node.

mod tree;

pub use tree::{run_search, EvalRequest, Search, SearchResult, Step};

use serde::{Deserialize, Serialize};

use crate::error::{ExitError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Vanilla,
    Policy,
    PolicyValue,
}

impl SearchMode {
    pub fn needs_network(self) -> bool {
        self != SearchMode::Vanilla
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub iterations: usize,
    pub c_b: f64,
    pub c_rave: f64,
    pub expansion_threshold: u32,
    pub w_a: f64,
    pub tau: f64,
    pub w_v: f64,
    pub mode: SearchMode,
    pub seed: u64,
}

impl SearchConfig {
    pub fn vanilla() -> Self {
        SearchConfig {
            iterations: 10_000,
            c_b: 0.25,
            c_rave: 3000.0,
            expansion_threshold: 0,
            w_a: 0.0,
            tau: 1.0,
            w_v: 0.0,
            mode: SearchMode::Vanilla,
            seed: 0,
        }
    }

    pub fn policy() -> Self {
        SearchConfig {
            c_b: 0.05,
            expansion_threshold: 1,
            w_a: 100.0,
            tau: 0.1,
            mode: SearchMode::Policy,
            ..SearchConfig::vanilla()
        }
    }

    pub fn policy_value() -> Self {
        SearchConfig { w_v: 0.75, mode: SearchMode::PolicyValue, ..SearchConfig::policy() }
    }

    pub fn for_mode(mode: SearchMode) -> Self {
        match mode {
            SearchMode::Vanilla => SearchConfig::vanilla(),
            SearchMode::Policy => SearchConfig::policy(),
            SearchMode::PolicyValue => SearchConfig::policy_value(),
        }
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(ExitError::Config("search needs at least one iteration".into()));
        }
        if !(self.c_rave > 0.0) {
            return Err(ExitError::Config("c_rave must be positive".into()));
        }
        if !(self.tau > 0.0) {
            return Err(ExitError::Config("softmax temperature must be positive".into()));
        }
        if self.c_b < 0.0 || self.w_a < 0.0 || self.w_v < 0.0 {
            return Err(ExitError::Config("search weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-edge accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeStats {
    /// Cell index of the action.
    pub cell: usize,
    pub n_sa: u32,
    /// Summed rewards for the player taking the action.
    pub r_sa: f64,
    pub n_rave: u32,
    pub r_rave: f64,
    pub prior: Option<f64>,
    pub q_nn_sum: f64,
    pub q_nn_count: u32,
}

impl EdgeStats {
    pub fn new(cell: usize) -> Self {
        EdgeStats { cell, n_sa: 0, r_sa: 0.0, n_rave: 0, r_rave: 0.0, prior: None, q_nn_sum: 0.0, q_nn_count: 0 }
    }
}

/// Node-level counts the tree policy needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeCounts {
    pub n_s: u64,
    pub n_rave_s: u64,
}

/// `r/n + c_b sqrt(ln n_s / n)`, or +inf for an untried edge.
pub fn uct(reward: f64, visits: u64, parent_visits: u64, c_b: f64) -> f64 {
    if visits == 0 {
        return f64::INFINITY;
    }
    let n = visits as f64;
    let explore = if c_b == 0.0 { 0.0 } else { c_b * ((parent_visits as f64).ln() / n).sqrt() };
    reward / n + explore
}

/// Weight of the RAVE estimate: `sqrt(c_rave / (3 n_s + c_rave))`.
pub fn rave_beta(n_s: u64, c_rave: f64) -> f64 {
    (c_rave / (3.0 * n_s as f64 + c_rave)).sqrt()
}

fn weighted(weight: f64, value: f64) -> f64 {
    if weight == 0.0 {
        0.0
    } else {
        weight * value
    }
}

/// Tree-policy score of one edge under the configured mode.
pub fn tree_policy_score(edge: &EdgeStats, node: NodeCounts, config: &SearchConfig) -> Result<f64> {
    let beta = rave_beta(node.n_s, config.c_rave);
    let plain = uct(edge.r_sa, edge.n_sa as u64, node.n_s, config.c_b);
    let rave = uct(edge.r_rave, edge.n_rave as u64, node.n_rave_s, config.c_b);
    let mut score = weighted(beta, rave) + weighted(1.0 - beta, plain);
    if config.mode.needs_network() {
        let prior = edge
            .prior
            .ok_or_else(|| ExitError::Config(format!("{:?} search reached an edge without a prior", config.mode)))?;
        score += weighted(config.w_a, prior / (edge.n_sa as f64 + 1.0));
    }
    if config.mode == SearchMode::PolicyValue && edge.q_nn_count > 0 {
        score += weighted(config.w_v, edge.q_nn_sum / edge.q_nn_count as f64);
    }
    Ok(score)
}

/// Index of the edge the tree policy picks. Ties (including several
/// infinite scores) go to the higher prior, then to the earlier cell.
pub fn select_edge(edges: &[EdgeStats], node: NodeCounts, config: &SearchConfig) -> Result<usize> {
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, edge) in edges.iter().enumerate() {
        let score = tree_policy_score(edge, node, config)?;
        let prior = edge.prior.unwrap_or(0.0);
        let better = match best {
            None => true,
            Some((_, s, p)) => score > s || (score == s && prior > p),
        };
        if better {
            best = Some((i, score, prior));
        }
    }
    best.map(|(i, _, _)| i).ok_or_else(|| ExitError::Search("node has no edges".into()))
}

/// AMAF update of one node. `actions` are the moves of the simulation
/// from this node's ply onward; the node's player made every second one,
/// starting with the first. Moves not legal at the node are ignored.
/// Returns how many edges were updated, the increment of n_RAVE(s).
pub fn rave_backup(edges: &mut [EdgeStats], actions: &[usize], reward: f64) -> u64 {
    let mut updated = 0;
    for &cell in actions.iter().step_by(2) {
        if let Ok(e) = edges.binary_search_by_key(&cell, |e| e.cell) {
            edges[e].n_rave += 1;
            edges[e].r_rave += reward;
            updated += 1;
        }
    }
    updated
}
