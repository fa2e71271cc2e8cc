//! Reference solvers the trained policy is compared against.

mod astar;
mod montecarlo;
mod qlearning;

pub use astar::{astar, AStarPlanner, Path};
pub use montecarlo::{monte_carlo_train, MonteCarloParams};
pub use qlearning::{qlearning_train, step_rewards, QLearningParams, QTable};

use crate::gridworld::Action;
use crate::policy::Row;
use rand::Rng;

/// ε-greedy schedule shared by the tabular learners.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 0.2,
            decay: 0.995,
            floor: 0.02,
        }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, episode: usize) -> f64 {
        (self.start * self.decay.powi(episode as i32)).max(self.floor)
    }
}

/// First action with the largest value.
pub(crate) fn best_action(values: &Row) -> Action {
    crate::policy::argmax(values)
}

pub(crate) fn epsilon_greedy<R: Rng + ?Sized>(values: &Row, epsilon: f64, rng: &mut R) -> Action {
    if rng.gen::<f64>() < epsilon {
        Action::ALL[rng.gen_range(0..Action::COUNT)]
    } else {
        best_action(values)
    }
}
