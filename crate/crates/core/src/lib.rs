//! Expert Iteration for Hex.
//!
//! A tree-search expert (MCTS with RAVE, optionally guided by a network)
//! labels positions; a convolutional apprentice imitates those labels; the
//! apprentice is then plugged back into the expert. The crate holds the game
//! rules, the search, the network with hand-written gradients, dataset
//! construction, the iteration loop with its batched evaluation scheduler,
//! a REINFORCE baseline and an Elo evaluation harness.

pub mod baseline_rl;
pub mod config;
pub mod encode;
pub mod error;
pub mod evaluation;
pub mod exit_loop;
pub mod hex;
pub mod imitation;
pub mod neural;
pub mod parallel;
pub mod search;
pub mod seed;

pub use error::{ExitError, Result};
