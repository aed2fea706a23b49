//! Bradley-Terry ratings by minorization-maximization, on the Elo scale.

use serde::{Deserialize, Serialize};

use super::MatchRecord;
use crate::error::{ExitError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EloOptions {
    /// Virtual games added to every pair that met, split evenly; keeps
    /// ratings finite when one side never won.
    pub prior_games: f64,
    /// Agent fixed at 0; the first agent seen by default.
    pub anchor: Option<String>,
    /// Stop when no rating moves more than this in one sweep.
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for EloOptions {
    fn default() -> Self {
        EloOptions { prior_games: 0.0, anchor: None, tolerance: 0.01, max_sweeps: 1_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EloTable {
    /// (agent, rating) in order of first appearance.
    pub ratings: Vec<(String, f64)>,
    pub games: usize,
    pub sweeps: usize,
    pub converged: bool,
    pub log_likelihood: f64,
}

impl EloTable {
    pub fn rating(&self, id: &str) -> Option<f64> {
        self.ratings.iter().find(|(a, _)| a == id).map(|(_, r)| *r)
    }

    /// Predicted probability that `a` beats `b`.
    pub fn win_probability(&self, a: &str, b: &str) -> Option<f64> {
        Some(1.0 / (1.0 + 10f64.powf((self.rating(b)? - self.rating(a)?) / 400.0)))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# games {} sweeps {} converged {} log-likelihood {:.4}\n",
            self.games, self.sweeps, self.converged, self.log_likelihood
        );
        for (id, r) in &self.ratings {
            out.push_str(&format!("{id}\t{r:.2}\n"));
        }
        out
    }
}

pub fn fit_elo(records: &[MatchRecord], options: &EloOptions) -> Result<EloTable> {
    let games: Vec<(String, String)> = records.iter().map(|r| (r.winner_id.clone(), r.loser_id().to_string())).collect();
    fit_elo_games(&games, options)
}

/// Fits ratings to (winner, loser) pairs.
pub fn fit_elo_games(games: &[(String, String)], options: &EloOptions) -> Result<EloTable> {
    let mut ids: Vec<String> = Vec::new();
    let index = |ids: &mut Vec<String>, id: &str| match ids.iter().position(|x| x == id) {
        Some(i) => i,
        None => {
            ids.push(id.to_string());
            ids.len() - 1
        }
    };
    let pairs: Vec<(usize, usize)> = games.iter().map(|(w, l)| (index(&mut ids, w), index(&mut ids, l))).collect();
    let k = ids.len();
    if k < 2 {
        return Err(ExitError::Elo("ratings need at least two agents".into()));
    }
    if pairs.iter().any(|(w, l)| w == l) {
        return Err(ExitError::Elo("an agent cannot play itself".into()));
    }
    let mut wins = vec![vec![0.0f64; k]; k];
    for &(w, l) in &pairs {
        wins[w][l] += 1.0;
    }
    if options.prior_games > 0.0 {
        let half = options.prior_games / 2.0;
        for i in 0..k {
            for j in 0..k {
                if i != j && wins[i][j] + wins[j][i] > 0.0 {
                    wins[i][j] += half;
                }
            }
        }
    }

    let played = |i: usize, j: usize| wins[i][j] + wins[j][i] > 0.0;
    let components = groups(k, played);
    if components.len() > 1 {
        return Err(ExitError::Elo(format!("agents form disconnected groups: {}", describe(&components, &ids))));
    }
    let strong = strongly_connected(k, |i, j| wins[i][j] > 0.0);
    if strong.len() > 1 {
        return Err(ExitError::Elo(format!(
            "ratings are unbounded: no wins lead from some groups to others ({}); add prior games",
            describe(&strong, &ids)
        )));
    }

    let anchor = match &options.anchor {
        Some(a) => ids.iter().position(|x| x == a).ok_or_else(|| ExitError::Elo(format!("anchor {a} played no games")))?,
        None => 0,
    };
    let total_wins: Vec<f64> = (0..k).map(|i| wins[i].iter().sum()).collect();
    let mut gamma = vec![1.0f64; k];
    let mut elo = vec![0.0f64; k];
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < options.max_sweeps {
        sweeps += 1;
        for i in 0..k {
            let denom: f64 = (0..k).filter(|&j| j != i).map(|j| (wins[i][j] + wins[j][i]) / (gamma[i] + gamma[j])).sum();
            gamma[i] = total_wins[i] / denom;
        }
        let g0 = gamma[anchor];
        gamma.iter_mut().for_each(|g| *g /= g0);
        let next: Vec<f64> = gamma.iter().map(|g| 400.0 * g.log10()).collect();
        let change = next.iter().zip(&elo).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        elo = next;
        if change < options.tolerance {
            converged = true;
            break;
        }
    }
    let mut log_likelihood = 0.0;
    for i in 0..k {
        for j in 0..k {
            if wins[i][j] > 0.0 {
                log_likelihood += wins[i][j] * (gamma[i] / (gamma[i] + gamma[j])).ln();
            }
        }
    }
    Ok(EloTable { ratings: ids.into_iter().zip(elo).collect(), games: games.len(), sweeps, converged, log_likelihood })
}

fn describe(groups: &[Vec<usize>], ids: &[String]) -> String {
    groups
        .iter()
        .map(|g| format!("{{{}}}", g.iter().map(|&i| ids[i].as_str()).collect::<Vec<_>>().join(", ")))
        .collect::<Vec<_>>()
        .join(" ")
}

fn reachable(k: usize, from: usize, edge: &impl Fn(usize, usize) -> bool) -> Vec<bool> {
    let mut seen = vec![false; k];
    let mut stack = vec![from];
    seen[from] = true;
    while let Some(i) = stack.pop() {
        for j in 0..k {
            if !seen[j] && edge(i, j) {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen
}

/// Connected components of an undirected relation.
fn groups(k: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    strongly_connected(k, |i, j| edge(i, j) || edge(j, i))
}

/// Strongly connected components, each listed in index order.
fn strongly_connected(k: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let forward: Vec<Vec<bool>> = (0..k).map(|i| reachable(k, i, &edge)).collect();
    let mut assigned = vec![false; k];
    let mut out = Vec::new();
    for i in 0..k {
        if assigned[i] {
            continue;
        }
        let group: Vec<usize> = (0..k).filter(|&j| forward[i][j] && forward[j][i]).collect();
        group.iter().for_each(|&j| assigned[j] = true);
        out.push(group);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn games(spec: &[(&str, &str, usize)]) -> Vec<(String, String)> {
        spec.iter().flat_map(|&(w, l, n)| std::iter::repeat_n((w.to_string(), l.to_string()), n)).collect()
    }

    #[test]
    fn two_agents_closed_form() {
        let t = fit_elo_games(&games(&[("a", "b", 75), ("b", "a", 25)]), &EloOptions::default()).unwrap();
        assert_eq!(t.rating("a"), Some(0.0));
        let diff = -t.rating("b").unwrap();
        assert!((diff - 400.0 * 3f64.log10()).abs() < 0.5, "{diff}");
        assert!(t.converged);
    }

    #[test]
    fn symmetric_results_give_equal_ratings() {
        let g = games(&[("a", "b", 10), ("b", "a", 10), ("b", "c", 10), ("c", "b", 10), ("a", "c", 7), ("c", "a", 7)]);
        let t = fit_elo_games(&g, &EloOptions::default()).unwrap();
        for (_, r) in &t.ratings {
            assert!(r.abs() < 0.05);
        }
    }

    #[test]
    fn disconnected_groups_are_named() {
        let g = games(&[("a", "b", 3), ("b", "a", 1), ("c", "d", 2), ("d", "c", 2)]);
        match fit_elo_games(&g, &EloOptions::default()) {
            Err(ExitError::Elo(msg)) => assert!(msg.contains("{a, b}") && msg.contains("{c, d}"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unbeaten_agent_needs_a_prior() {
        let g = games(&[("a", "b", 5)]);
        assert!(fit_elo_games(&g, &EloOptions::default()).is_err());
        let t = fit_elo_games(&g, &EloOptions { prior_games: 1.0, ..EloOptions::default() }).unwrap();
        assert!(t.rating("b").unwrap() < -300.0);
    }

    #[test]
    fn anchor_choice_shifts_ratings() {
        let g = games(&[("a", "b", 30), ("b", "a", 10), ("b", "c", 20), ("c", "b", 20), ("c", "a", 5), ("a", "c", 15)]);
        let t0 = fit_elo_games(&g, &EloOptions::default()).unwrap();
        let tb = fit_elo_games(&g, &EloOptions { anchor: Some("b".into()), ..EloOptions::default() }).unwrap();
        let shift = t0.rating("b").unwrap();
        for (id, r) in &t0.ratings {
            assert!((tb.rating(id).unwrap() - (r - shift)).abs() < 0.1);
        }
    }
}
