//! Multi-agent pathfinding on 4-connected grids.
//!
//! A shared stochastic policy is trained with replicator dynamics against a
//! reach-avoid reward computed by a weighted automaton, and compared with A*,
//! tabular Q-learning and first-visit Monte-Carlo control.
//!
//! ```
//! use mapf_egt::gridworld::{parse_map, EnvConfig};
//! use mapf_egt::bench::{evaluate, Solver};
//!
//! let map = parse_map("S...\n.#..\n...G").unwrap();
//! let env = EnvConfig::new(map, 1);
//! let m = evaluate(Solver::AStar, &env, 10, 0).unwrap();
//! assert_eq!(m.success_rate, 1.0);
//! assert_eq!(m.mean_timesteps, Some(5.0));
//! ```

pub mod baselines;
pub mod bench;
pub mod cli;
pub mod config;
pub mod egt;
pub mod gridworld;
pub mod policy;
pub mod reward;
