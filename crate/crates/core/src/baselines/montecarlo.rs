use rand::Rng;
use rayon::prelude::*;

use super::qlearning::{step_rewards, QTable};
use super::{epsilon_greedy, EpsilonSchedule};
use crate::egt::episode_rng;
use crate::gridworld::{run_episode_with, Action, Cell, Controller, EnvConfig, EnvError, Trajectory};
use crate::policy::TabularPolicy;
use crate::reward::{RewardMachine, RewardParams};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonteCarloParams {
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    /// Total number of episodes.
    pub episodes: usize,
    /// Episodes rolled out between two policy improvements.
    pub batch_size: usize,
}

impl Default for MonteCarloParams {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            epsilon: EpsilonSchedule::default(),
            episodes: 1000,
            batch_size: 16,
        }
    }
}

struct EpsilonGreedy<'a> {
    q: &'a QTable,
    epsilon: f64,
}

impl Controller for EpsilonGreedy<'_> {
    fn act<R: Rng + ?Sized>(&mut self, _agent: usize, cell: Cell, rng: &mut R) -> Action {
        epsilon_greedy(self.q.row(cell), self.epsilon, rng)
    }
}

/// Running first-visit averages of returns-to-go.
#[derive(Clone, Debug)]
pub(crate) struct ReturnAverages {
    q: QTable,
    counts: Vec<[u32; Action::COUNT]>,
    width: usize,
}

impl ReturnAverages {
    pub(crate) fn new(q: QTable, width: usize, cells: usize) -> Self {
        Self {
            q,
            counts: vec![[0; Action::COUNT]; cells],
            width,
        }
    }

    /// Adds the first-visit return-to-go of every pair in each agent's
    /// trajectory.
    pub(crate) fn absorb(&mut self, traj: &Trajectory, rewards: &[Vec<f64>], gamma: f64) {
        for (agent, r) in traj.agents.iter().zip(rewards) {
            let mut to_go = vec![0.0; r.len()];
            let mut acc = 0.0;
            for t in (0..r.len()).rev() {
                acc = r[t] + gamma * acc;
                to_go[t] = acc;
            }
            let mut seen = std::collections::HashSet::new();
            for (t, (&cell, &action)) in agent.cells.iter().zip(&agent.actions).enumerate() {
                if !seen.insert((cell, action)) {
                    continue;
                }
                let i = cell.y * self.width + cell.x;
                let n = &mut self.counts[i][action.index()];
                *n += 1;
                let old = self.q.get(cell, action);
                self.q.set(cell, action, old + (to_go[t] - old) / *n as f64);
            }
        }
    }
}

/// First-visit Monte-Carlo control with ε-greedy improvement after every
/// batch. Returns the greedy policy and the averaged returns.
pub fn monte_carlo_train<R: Rng + ?Sized>(
    env: &EnvConfig,
    params: &MonteCarloParams,
    reward: &RewardParams,
    rng: &mut R,
) -> Result<(TabularPolicy, QTable), EnvError> {
    env.validate()?;
    let map = &*env.map;
    let machine = RewardMachine::new(*reward);
    let mut averages = ReturnAverages::new(QTable::new(map), map.width(), map.num_cells());
    let batch = params.batch_size.max(1);

    let mut done = 0;
    while done < params.episodes {
        let n = batch.min(params.episodes - done);
        let epsilon = params.epsilon.at(done);
        let base = rng.next_u64();
        let q = &averages.q;
        let trajectories = (0..n)
            .into_par_iter()
            .map(|b| {
                let mut erng = episode_rng(base, b);
                run_episode_with(env, &mut EpsilonGreedy { q, epsilon }, &mut erng)
            })
            .collect::<Result<Vec<_>, _>>()?;
        for traj in &trajectories {
            let rewards: Vec<Vec<f64>> = traj
                .agents
                .iter()
                .map(|a| step_rewards(a, map, &machine))
                .collect();
            averages.absorb(traj, &rewards, params.gamma);
        }
        done += n;
    }
    let q = averages.q;
    Ok((q.greedy_policy(map), q))
}
