//! Run configuration: one TOML file resolves every setting of a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline_rl::ReinforceConfig;
use crate::error::{ExitError, Result};
use crate::exit_loop::ExitConfig;
use crate::neural::{NetworkConfig, TrainConfig};
use crate::search::{SearchConfig, SearchMode};

/// Search settings for each expert stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchPresets {
    pub vanilla: SearchConfig,
    pub policy: SearchConfig,
    pub policy_value: SearchConfig,
}

impl SearchPresets {
    pub fn paper() -> Self {
        SearchPresets {
            vanilla: SearchConfig::vanilla(),
            policy: SearchConfig::policy(),
            policy_value: SearchConfig::policy_value(),
        }
    }

    /// Every stage with `iterations` simulations.
    pub fn with_iterations(iterations: usize) -> Self {
        SearchPresets {
            vanilla: SearchConfig::vanilla().with_iterations(iterations),
            policy: SearchConfig::policy().with_iterations(iterations),
            policy_value: SearchConfig::policy_value().with_iterations(iterations),
        }
    }

    /// `iterations` simulations with the prior weight set to the mean
    /// number of simulations per cell of an n x n board.
    pub fn scaled(iterations: usize, board_size: usize) -> Self {
        let mut presets = SearchPresets::with_iterations(iterations);
        let w_a = iterations as f64 / (board_size * board_size) as f64;
        presets.policy.w_a = w_a;
        presets.policy_value.w_a = w_a;
        presets
    }

    pub fn for_mode(&self, mode: SearchMode) -> &SearchConfig {
        match mode {
            SearchMode::Vanilla => &self.vanilla,
            SearchMode::Policy => &self.policy,
            SearchMode::PolicyValue => &self.policy_value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: String,
    pub board_size: usize,
    /// Master seed; every other seed of the run is derived from it.
    pub seed: u64,
    pub exit: ExitConfig,
    pub search: SearchPresets,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub reinforce: ReinforceConfig,
}

impl RunConfig {
    /// Full-size settings on 9x9.
    pub fn paper() -> Self {
        RunConfig {
            name: "paper9x9".into(),
            board_size: 9,
            seed: 0,
            exit: ExitConfig::paper(9),
            search: SearchPresets::paper(),
            network: NetworkConfig::paper(9),
            train: TrainConfig::paper(),
            reinforce: ReinforceConfig::paper(),
        }
    }

    /// A run that finishes on a laptop: 5x5, small network, 2,000-simulation experts.
    pub fn desk() -> Self {
        let mut search = SearchPresets::scaled(2000, 5);
        search.policy_value.w_v = 0.25;
        RunConfig {
            name: "desk5x5".into(),
            board_size: 5,
            seed: 0,
            exit: ExitConfig::desk(5),
            search,
            network: NetworkConfig::desk(5),
            train: TrainConfig::desk(),
            reinforce: ReinforceConfig::desk(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(RunConfig::paper()),
            "desk" => Ok(RunConfig::desk()),
            other => Err(ExitError::Config(format!("unknown preset {other:?} (expected paper or desk)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.network.board_size != self.board_size {
            return Err(ExitError::Config(format!(
                "network is for {}x{} but the run is {}x{}",
                self.network.board_size, self.network.board_size, self.board_size, self.board_size
            )));
        }
        self.network.validate()?;
        self.exit.validate()?;
        self.reinforce.validate()?;
        for (mode, cfg) in [
            (SearchMode::Vanilla, &self.search.vanilla),
            (SearchMode::Policy, &self.search.policy),
            (SearchMode::PolicyValue, &self.search.policy_value),
        ] {
            if cfg.mode != mode {
                return Err(ExitError::Config(format!("search.{mode:?} preset has mode {:?}", cfg.mode)));
            }
            cfg.validate()?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ExitError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| ExitError::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::from_toml(&std::fs::read_to_string(path)?)
    }

    /// `<root>/run/<name>`.
    pub fn run_dir(&self, root: &Path) -> PathBuf {
        root.join("run").join(&self.name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for cfg in [RunConfig::paper(), RunConfig::desk()] {
            cfg.validate().unwrap();
            let text = cfg.to_toml().unwrap();
            let back = RunConfig::from_toml(&text).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_toml().unwrap(), text);
        }
    }

    #[test]
    fn paper_defaults() {
        let p = RunConfig::paper();
        assert_eq!(p.search.vanilla.iterations, 10_000);
        assert_eq!(p.search.policy.w_a, 100.0);
        assert_eq!(p.search.policy_value.w_v, 0.75);
        assert_eq!(p.exit.moves_per_iteration, 243_000);
        assert_eq!(p.exit.growth_rate, 0.10);
        assert_eq!(p.train.batch_size, 250);
        assert_eq!(p.network.layers.len(), 13);
    }

    #[test]
    fn mismatched_board_sizes_are_rejected() {
        let mut cfg = RunConfig::desk();
        cfg.network = NetworkConfig::desk(7);
        assert!(matches!(cfg.validate(), Err(ExitError::Config(_))));
        assert!(RunConfig::from_toml("board_size = \"five\"").is_err());
    }
}
