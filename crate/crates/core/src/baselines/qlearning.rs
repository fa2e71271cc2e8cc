use rand::Rng;

use super::{best_action, epsilon_greedy, EpsilonSchedule};
use crate::gridworld::{reset, step, Action, AgentTrajectory, Cell, EnvConfig, EnvError, GridMap, StepEvent};
use crate::policy::{Row, TabularPolicy};
use crate::reward::{observations, Observation, RewardMachine, RewardParams};

/// Action values over single-agent cells, shared by all agents.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    width: usize,
    values: Vec<Row>,
}

impl QTable {
    pub fn new(map: &GridMap) -> Self {
        Self {
            width: map.width(),
            values: vec![[0.0; Action::COUNT]; map.num_cells()],
        }
    }

    fn idx(&self, cell: Cell) -> usize {
        cell.y * self.width + cell.x
    }

    pub fn row(&self, cell: Cell) -> &Row {
        &self.values[self.idx(cell)]
    }

    pub fn get(&self, cell: Cell, action: Action) -> f64 {
        self.row(cell)[action.index()]
    }

    pub fn set(&mut self, cell: Cell, action: Action, value: f64) {
        let i = self.idx(cell);
        self.values[i][action.index()] = value;
    }

    pub fn max(&self, cell: Cell) -> f64 {
        self.row(cell).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn greedy_policy(&self, map: &GridMap) -> TabularPolicy {
        TabularPolicy::deterministic(map, |c| best_action(self.row(c)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QLearningParams {
    pub learning_rate: f64,
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    pub episodes: usize,
}

impl Default for QLearningParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            gamma: 0.99,
            epsilon: EpsilonSchedule::default(),
            episodes: 1000,
        }
    }
}

/// Per-step rewards of one agent: the reach-avoid weight of each step, with
/// the goal reward folded into the step that enters the goal.
pub fn step_rewards(traj: &AgentTrajectory, map: &GridMap, machine: &RewardMachine) -> Vec<f64> {
    let weights = machine.weights(&observations(traj, map));
    let mut out: Vec<f64> = weights[..traj.actions.len()].to_vec();
    if let (Some(t), Some(last)) = (traj.reached_at, out.last_mut()) {
        if t == traj.actions.len() {
            *last += weights[t];
        }
    }
    out
}

/// Tabular Q-learning with one table shared by every agent. Returns the
/// greedy policy and the learned values.
pub fn qlearning_train<R: Rng + ?Sized>(
    env: &EnvConfig,
    params: &QLearningParams,
    reward: &RewardParams,
    rng: &mut R,
) -> Result<(TabularPolicy, QTable), EnvError> {
    env.validate()?;
    let map = &*env.map;
    let machine = RewardMachine::new(*reward);
    let mut q = QTable::new(map);

    for episode in 0..params.episodes {
        let eps = params.epsilon.at(episode);
        let mut state = reset(env, rng)?;
        let mut memory = vec![machine.initial(); state.len()];
        for s in state.iter_mut() {
            if map.is_goal(s.cell) {
                s.reached = true;
                s.active = false;
            }
        }
        let mut actions = vec![Action::Stay; state.len()];
        let mut t = 0;
        while t < env.horizon && state.iter().any(|s| s.active) {
            for (i, s) in state.iter().enumerate() {
                actions[i] = if s.active {
                    epsilon_greedy(q.row(s.cell), eps, rng)
                } else {
                    Action::Stay
                };
            }
            let (next, events) = step(env, &state, &actions, rng)?;
            for i in 0..state.len() {
                if !state[i].active {
                    continue;
                }
                let (cell, action) = (state[i].cell, actions[i]);
                let obs = Observation::new(map.is_goal(cell), events[i].is_collision());
                let (m, mut r) = machine.step_reward(memory[i], obs);
                let target = if events[i] == StepEvent::ReachedGoal {
                    let (m2, bonus) = machine.step_reward(m, Observation::new(true, false));
                    memory[i] = m2;
                    r += bonus;
                    r
                } else {
                    memory[i] = m;
                    r + params.gamma * q.max(next[i].cell)
                };
                let old = q.get(cell, action);
                q.set(cell, action, old + params.learning_rate * (target - old));
            }
            state = next;
            t += 1;
        }
    }
    Ok((q.greedy_policy(map), q))
}
