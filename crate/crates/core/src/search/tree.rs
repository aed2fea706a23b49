use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{rave_backup, select_edge, EdgeStats, NodeCounts, SearchConfig, SearchMode};
use crate::encode::{encode, EncodedState};
use crate::error::{ExitError, Result};
use crate::hex::{BoardState, Color, Move};
use crate::neural::{NetOutput, Network};

type NodeId = u32;
const NO_CHILD: NodeId = NodeId::MAX;

#[derive(Debug, Clone)]
struct Node {
    n_s: u64,
    n_rave_s: u64,
    to_move: Color,
    edges: Vec<EdgeStats>,
    children: Vec<NodeId>,
}

impl Node {
    fn new(state: &BoardState) -> Node {
        let edges: Vec<EdgeStats> = state.legal_indices().into_iter().map(EdgeStats::new).collect();
        let children = vec![NO_CHILD; edges.len()];
        Node { n_s: 1, n_rave_s: 0, to_move: state.to_move(), edges, children }
    }

    fn counts(&self) -> NodeCounts {
        NodeCounts { n_s: self.n_s, n_rave_s: self.n_rave_s }
    }
}

/// A network evaluation the search is waiting for.
#[derive(Debug, Clone)]
pub struct EvalRequest {
    pub input: EncodedState,
    pub to_move: Color,
    pub mask: Vec<bool>,
    pub tau: f64,
}

impl EvalRequest {
    pub fn evaluate(&self, net: &Network) -> Result<NetOutput> {
        net.forward(&self.input, self.to_move, &self.mask, self.tau)
    }
}

/// Outcome of [`Search::advance`].
#[derive(Debug, Clone)]
pub enum Step {
    /// The search is suspended until [`Search::resume`] supplies this evaluation.
    NeedsEval(EvalRequest),
    Done,
}

#[derive(Debug, Clone)]
struct Pending {
    path: Vec<(NodeId, usize)>,
    state: BoardState,
    /// Node awaiting priors; `None` while the root itself is pending.
    leaf: NodeId,
    /// Whether this pending evaluation belongs to a simulation (the root's
    /// initial evaluation does not).
    in_simulation: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub board_size: usize,
    /// Root visit counts n(s,a), dense over the n*n cells.
    pub visits: Vec<u32>,
    /// Sum of the root visit counts.
    pub total_visits: u64,
    /// Most visited move, earliest cell on ties.
    pub chosen: Move,
    /// Mean reward at the root for the player to move.
    pub root_value: f64,
    /// Network evaluations consumed.
    pub evaluations: u64,
}

impl SearchResult {
    /// n(s,a) / sum_a n(s,a), dense over the cells.
    pub fn distribution(&self) -> Vec<f64> {
        self.visits.iter().map(|&v| v as f64 / self.total_visits as f64).collect()
    }
}

/// A resumable search. Call [`Search::advance`] until it returns
/// [`Step::Done`], answering every [`Step::NeedsEval`] with
/// [`Search::resume`]. The tree, the pending simulation and the RNG live
/// inside, so a suspended search can move between threads.
#[derive(Debug, Clone)]
pub struct Search {
    config: SearchConfig,
    root: BoardState,
    nodes: Vec<Node>,
    rng: ChaCha8Rng,
    completed: usize,
    pending: Option<Pending>,
    evaluations: u64,
    uses_network: bool,
    root_ready: bool,
}

impl Search {
    pub fn new(root: BoardState, config: SearchConfig, uses_network: bool) -> Result<Search> {
        config.validate()?;
        if root.is_terminal() {
            return Err(ExitError::Search("cannot search from a terminal position".into()));
        }
        if config.mode.needs_network() && !uses_network {
            return Err(ExitError::Config(format!("{:?} search needs a network", config.mode)));
        }
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let nodes = vec![Node::new(&root)];
        Ok(Search {
            config,
            root,
            nodes,
            rng,
            completed: 0,
            pending: None,
            evaluations: 0,
            uses_network,
            root_ready: false,
        })
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }

    pub fn root_state(&self) -> &BoardState {
        &self.root
    }

    pub fn completed_iterations(&self) -> usize {
        self.completed
    }

    pub fn is_done(&self) -> bool {
        self.pending.is_none() && self.completed >= self.config.iterations
    }

    fn request_for(&self, state: &BoardState) -> EvalRequest {
        EvalRequest { input: encode(state), to_move: state.to_move(), mask: state.legal_mask(), tau: self.config.tau }
    }

    /// Runs simulations until one needs a network evaluation or the
    /// iteration budget is spent.
    pub fn advance(&mut self) -> Result<Step> {
        if self.pending.is_some() {
            return Err(ExitError::Search("search is suspended awaiting an evaluation".into()));
        }
        if self.uses_network && !self.root_ready {
            let request = self.request_for(&self.root);
            self.pending = Some(Pending { path: Vec::new(), state: self.root.clone(), leaf: 0, in_simulation: false });
            return Ok(Step::NeedsEval(request));
        }
        while self.completed < self.config.iterations {
            if let Some(request) = self.simulate()? {
                return Ok(Step::NeedsEval(request));
            }
        }
        Ok(Step::Done)
    }

    /// Supplies the evaluation for the pending node and finishes its simulation.
    pub fn resume(&mut self, output: NetOutput) -> Result<()> {
        let pending = self.pending.take().ok_or_else(|| ExitError::Search("no evaluation is pending".into()))?;
        self.evaluations += 1;
        let node = &mut self.nodes[pending.leaf as usize];
        for edge in &mut node.edges {
            edge.prior = Some(output.policy[edge.cell]);
        }
        if !pending.in_simulation {
            self.root_ready = true;
            return Ok(());
        }
        let value = if self.config.mode == SearchMode::PolicyValue {
            Some(output.value.ok_or_else(|| ExitError::Config("policy+value search needs a value-headed network".into()))?)
        } else {
            None
        };
        self.finish(pending.path, pending.state, Some(pending.leaf), value);
        Ok(())
    }

    /// Tree phase of one simulation. Returns a request when the newly
    /// expanded node must be evaluated before the rollout.
    fn simulate(&mut self) -> Result<Option<EvalRequest>> {
        let mut state = self.root.clone();
        let mut node: NodeId = 0;
        let mut path: Vec<(NodeId, usize)> = Vec::new();
        let mut expanded: Option<NodeId> = None;
        while !state.is_terminal() {
            let current = &self.nodes[node as usize];
            let e = select_edge(&current.edges, current.counts(), &self.config)?;
            let cell = current.edges[e].cell;
            let child = current.children[e];
            let visits = current.edges[e].n_sa;
            path.push((node, e));
            state.place(cell);
            if child != NO_CHILD {
                node = child;
                continue;
            }
            if visits >= self.config.expansion_threshold {
                let id = self.nodes.len() as NodeId;
                self.nodes.push(Node::new(&state));
                self.nodes[node as usize].children[e] = id;
                expanded = Some(id);
                if self.uses_network && !state.is_terminal() {
                    let request = self.request_for(&state);
                    self.pending = Some(Pending { path, state, leaf: id, in_simulation: true });
                    return Ok(Some(request));
                }
            }
            break;
        }
        self.finish(path, state, expanded, None);
        Ok(None)
    }

    /// Rollout from `state`, then backup of rewards, value estimates and
    /// RAVE statistics along the simulation.
    fn finish(&mut self, path: Vec<(NodeId, usize)>, mut state: BoardState, expanded: Option<NodeId>, value: Option<f64>) {
        let leaf_to_move = state.to_move();
        let mut empties: Vec<usize> = state.legal_indices();
        let mut rollout: Vec<usize> = Vec::with_capacity(empties.len());
        while !state.is_terminal() {
            let k = self.rng.random_range(0..empties.len());
            let cell = empties.swap_remove(k);
            state.place(cell);
            rollout.push(cell);
        }
        let winner = state.winner().expect("rollouts end in a decided game");

        for &(id, e) in &path {
            let node = &mut self.nodes[id as usize];
            node.n_s += 1;
            let actor = node.to_move;
            let edge = &mut node.edges[e];
            edge.n_sa += 1;
            if actor == winner {
                edge.r_sa += 1.0;
            }
            if let Some(v) = value {
                edge.q_nn_sum += if actor == leaf_to_move { v } else { 1.0 - v };
                edge.q_nn_count += 1;
            }
        }

        // All moves of the simulation in order, with the node (if any) they
        // were played from.
        let mut actions: Vec<usize> = path.iter().map(|&(id, e)| self.nodes[id as usize].edges[e].cell).collect();
        let first_rollout = actions.len();
        actions.extend_from_slice(&rollout);
        let mut rave_nodes: Vec<(NodeId, usize)> = path.iter().enumerate().map(|(t, &(id, _))| (id, t)).collect();
        if let Some(id) = expanded {
            if !self.nodes[id as usize].edges.is_empty() {
                rave_nodes.push((id, first_rollout));
            }
        }
        for (id, t) in rave_nodes {
            let node = &mut self.nodes[id as usize];
            let reward = if node.to_move == winner { 1.0 } else { 0.0 };
            node.n_rave_s += rave_backup(&mut node.edges, &actions[t..], reward);
        }
        self.completed += 1;
    }

    pub fn result(&self) -> SearchResult {
        let root = &self.nodes[0];
        let n = self.root.size();
        let mut visits = vec![0u32; n * n];
        let mut total = 0u64;
        let mut reward = 0.0;
        let mut best: Option<(usize, u32)> = None;
        for edge in &root.edges {
            visits[edge.cell] = edge.n_sa;
            total += edge.n_sa as u64;
            reward += edge.r_sa;
            if best.is_none_or(|(_, v)| edge.n_sa > v) {
                best = Some((edge.cell, edge.n_sa));
            }
        }
        let chosen = Move::from_index(best.map_or(0, |(c, _)| c), n);
        SearchResult {
            board_size: n,
            visits,
            total_visits: total,
            chosen,
            root_value: if total > 0 { reward / total as f64 } else { 0.5 },
            evaluations: self.evaluations,
        }
    }

    /// Root edge statistics (for inspection and tests).
    pub fn root_edges(&self) -> &[EdgeStats] {
        &self.nodes[0].edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Checks the bookkeeping invariants of every node: n(s) is one more
    /// than the summed edge visits, n_RAVE(s) is the summed RAVE counts and
    /// rewards never exceed visits.
    pub fn check_invariants(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            let visits: u64 = node.edges.iter().map(|e| e.n_sa as u64).sum();
            let rave: u64 = node.edges.iter().map(|e| e.n_rave as u64).sum();
            let terminal = node.edges.is_empty();
            if !terminal && node.n_s != visits + 1 {
                return Err(ExitError::Search(format!("node {i}: n_s {} != 1 + {visits}", node.n_s)));
            }
            if node.n_rave_s != rave {
                return Err(ExitError::Search(format!("node {i}: n_rave_s {} != {rave}", node.n_rave_s)));
            }
            for e in &node.edges {
                if e.r_sa > e.n_sa as f64 || e.r_rave > e.n_rave as f64 || e.q_nn_count > e.n_sa + 1 {
                    return Err(ExitError::Search(format!("node {i}: edge {} statistics out of range", e.cell)));
                }
            }
        }
        Ok(())
    }
}

/// Runs a full search, evaluating requests on `network` one at a time.
pub fn run_search(root: &BoardState, config: &SearchConfig, network: Option<&Network>) -> Result<SearchResult> {
    if config.mode.needs_network() && network.is_none() {
        return Err(ExitError::Config(format!("{:?} search needs a network", config.mode)));
    }
    let mut search = Search::new(root.clone(), config.clone(), network.is_some() && config.mode.needs_network())?;
    loop {
        match search.advance()? {
            Step::Done => return Ok(search.result()),
            Step::NeedsEval(request) => {
                let net = network.expect("checked above");
                search.resume(request.evaluate(net)?)?;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vanilla(iterations: usize, seed: u64) -> SearchConfig {
        SearchConfig::vanilla().with_iterations(iterations).with_seed(seed)
    }

    #[test]
    fn single_iteration_is_one_hot() {
        let root = BoardState::new(3).unwrap();
        let r = run_search(&root, &vanilla(1, 1), None).unwrap();
        assert_eq!(r.total_visits, 1);
        assert_eq!(r.visits.iter().filter(|&&v| v == 1).count(), 1);
        assert_eq!(r.distribution().iter().sum::<f64>(), 1.0);
        assert_eq!(r.chosen, Move::new(0, 0));
    }

    #[test]
    fn same_seed_same_result() {
        let root = BoardState::new(4).unwrap().play(Move::new(1, 2)).unwrap();
        let a = run_search(&root, &vanilla(300, 9), None).unwrap();
        let b = run_search(&root, &vanilla(300, 9), None).unwrap();
        assert_eq!(a, b);
        let c = run_search(&root, &vanilla(300, 10), None).unwrap();
        assert_ne!(a.visits, c.visits);
    }

    #[test]
    fn root_visits_sum_to_iterations() {
        let root = BoardState::new(5).unwrap();
        let mut s = Search::new(root, vanilla(500, 2), false).unwrap();
        assert!(matches!(s.advance().unwrap(), Step::Done));
        let r = s.result();
        assert_eq!(r.total_visits, 500);
        s.check_invariants().unwrap();
        // Every root move tried at least once.
        assert!(s.root_edges().iter().all(|e| e.n_sa >= 1));
    }

    #[test]
    fn terminal_root_is_rejected() {
        let mut s = BoardState::new(2).unwrap();
        for (r, c) in [(0, 0), (0, 1), (1, 0)] {
            s.apply(Move::new(r, c)).unwrap();
        }
        assert!(run_search(&s, &vanilla(10, 0), None).is_err());
    }

    #[test]
    fn network_mode_without_network_is_rejected() {
        let root = BoardState::new(3).unwrap();
        let cfg = SearchConfig::policy().with_iterations(10);
        assert!(matches!(run_search(&root, &cfg, None), Err(ExitError::Config(_))));
    }

    #[test]
    fn rave_single_simulation_matches_counts() {
        let root = BoardState::new(3).unwrap();
        let mut s = Search::new(root, vanilla(1, 4), false).unwrap();
        s.advance().unwrap();
        let edges = s.root_edges();
        let tried = edges.iter().find(|e| e.n_sa == 1).unwrap();
        assert_eq!(tried.n_rave, 1);
        assert_eq!(tried.r_rave, tried.r_sa);
        s.check_invariants().unwrap();
    }
}
