//! Policy training with replicator dynamics.
//!
//! Each iteration rolls out a batch of joint episodes under the current shared
//! policy, scores every agent with the reach-avoid reward, and estimates a
//! fitness for each (cell, action) pair as the mean return of the agent
//! trajectories that used it. Within each cell, actions then grow or shrink in
//! proportion to their fitness relative to the cell's average. Finally the
//! result is blended with the uniform policy using an exploration weight that
//! decays every iteration. Training stops once the batch return stops
//! improving by at least `convergence_threshold`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::gridworld::{run_episode_with, Action, EnvConfig, EnvError, GridMap, Trajectory};
use crate::policy::{normalized, Row, Sampler, TabularPolicy, UNIFORM_ROW};
use crate::reward::{observations, RewardError, RewardMachine, RewardParams, Valuation};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("invalid training parameter {name}: {message}")]
    Param { name: &'static str, message: String },
}

/// Which return is credited to a (cell, action) pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FitnessMode {
    /// Return of the whole agent trajectory.
    #[default]
    Trajectory,
    /// Return from the first visit of the pair onward.
    ReturnToGo,
}

impl std::str::FromStr for FitnessMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trajectory" => Ok(Self::Trajectory),
            "return_to_go" => Ok(Self::ReturnToGo),
            other => Err(format!("unknown fitness mode {other:?}")),
        }
    }
}

impl std::fmt::Display for FitnessMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Trajectory => "trajectory",
            Self::ReturnToGo => "return_to_go",
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub reward: RewardParams,
    pub valuation: Valuation,
    pub batch_size: usize,
    /// Step size between the old policy and the replicator target.
    pub learning_rate: f64,
    /// Amount removed from the exploration weight each iteration.
    pub weight_decrement: f64,
    pub exploration_floor: f64,
    /// Exploration weight before the first update.
    pub initial_weight: f64,
    pub convergence_threshold: f64,
    /// Consecutive iterations below the threshold before training stops.
    pub patience: usize,
    pub max_iterations: usize,
    pub fitness: FitnessMode,
}

impl TrainConfig {
    /// Defaults: ν = 0.05, ε = 0.05, α = 0.5, B = 64, 500 iterations,
    /// δ = 0.01 · agents · b, reward tuned to the env horizon, discounted sum.
    pub fn new(env: EnvConfig) -> Self {
        let reward = RewardParams::for_horizon(env.horizon);
        Self::with_reward(env, reward)
    }

    pub fn with_reward(env: EnvConfig, reward: RewardParams) -> Self {
        EgtSettings::default().config(env, reward)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.env.validate()?;
        let check = |ok: bool, name: &'static str, message: &str| {
            if ok {
                Ok(())
            } else {
                Err(TrainError::Param {
                    name,
                    message: message.to_owned(),
                })
            }
        };
        check(
            self.weight_decrement > 0.0 && self.weight_decrement < 1.0,
            "weight_decrement",
            "must lie in (0, 1)",
        )?;
        check(self.exploration_floor > 0.0, "exploration_floor", "must be positive")?;
        check(
            self.exploration_floor <= 1.0,
            "exploration_floor",
            "must not exceed 1",
        )?;
        check(
            (0.0..=1.0).contains(&self.initial_weight),
            "initial_weight",
            "must lie in [0, 1]",
        )?;
        check(
            self.convergence_threshold > 0.0,
            "convergence_threshold",
            "must be positive",
        )?;
        check(
            self.learning_rate > 0.0 && self.learning_rate <= 1.0,
            "learning_rate",
            "must lie in (0, 1]",
        )?;
        check(self.batch_size > 0, "batch_size", "must be positive")?;
        check(self.max_iterations > 0, "max_iterations", "must be positive")?;
        check(self.patience > 0, "patience", "must be positive")?;
        if let Valuation::DiscountedSum(g) = self.valuation {
            Valuation::discounted(g)?;
        }
        Ok(())
    }
}

/// Training hyperparameters without the environment and reward. Unset
/// valuation and threshold are derived from the reward constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EgtSettings {
    pub valuation: Option<Valuation>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decrement: f64,
    pub exploration_floor: f64,
    pub initial_weight: f64,
    pub convergence_threshold: Option<f64>,
    pub patience: usize,
    pub max_iterations: usize,
    pub fitness: FitnessMode,
}

impl Default for EgtSettings {
    fn default() -> Self {
        Self {
            valuation: None,
            batch_size: 64,
            learning_rate: 0.5,
            weight_decrement: 0.05,
            exploration_floor: 0.05,
            initial_weight: 1.0,
            convergence_threshold: None,
            patience: 1,
            max_iterations: 500,
            fitness: FitnessMode::Trajectory,
        }
    }
}

impl EgtSettings {
    pub fn config(&self, env: EnvConfig, reward: RewardParams) -> TrainConfig {
        let threshold = 0.01 * env.num_agents as f64 * reward.goal_reward;
        TrainConfig {
            valuation: self.valuation.unwrap_or(Valuation::DiscountedSum(reward.gamma)),
            convergence_threshold: self.convergence_threshold.unwrap_or(threshold),
            reward,
            env,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            weight_decrement: self.weight_decrement,
            exploration_floor: self.exploration_floor,
            initial_weight: self.initial_weight,
            patience: self.patience,
            max_iterations: self.max_iterations,
            fitness: self.fitness,
        }
    }
}

/// One joint episode with each agent's weight sequence and valuated return.
#[derive(Clone, Debug)]
pub struct ScoredEpisode {
    pub trajectory: Trajectory,
    pub weights: Vec<Vec<f64>>,
    pub returns: Vec<f64>,
}

impl ScoredEpisode {
    pub fn total_return(&self) -> f64 {
        self.returns.iter().sum()
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeBatch {
    pub episodes: Vec<ScoredEpisode>,
    pub valuation: Valuation,
}

impl EpisodeBatch {
    /// Mean over episodes of the all-agent return.
    pub fn expected_return(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().map(ScoredEpisode::total_return).sum::<f64>() / self.episodes.len() as f64
    }
}

/// Scores every agent of a trajectory with the reach-avoid reward.
pub fn score_episode(
    trajectory: Trajectory,
    map: &GridMap,
    machine: &RewardMachine,
    valuation: Valuation,
) -> Result<ScoredEpisode, RewardError> {
    let weights: Vec<Vec<f64>> = trajectory
        .agents
        .iter()
        .map(|a| machine.weights(&observations(a, map)))
        .collect();
    let returns = weights
        .iter()
        .map(|w| valuation.valuate(w))
        .collect::<Result<_, _>>()?;
    Ok(ScoredEpisode {
        trajectory,
        weights,
        returns,
    })
}

/// Per-episode generator: the batch draws one base seed from `rng` and
/// episode `b` runs on `base + b`. Batches are reproducible regardless of
/// how the episodes are scheduled across threads.
pub fn episode_rng(base: u64, episode: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(base.wrapping_add(episode as u64))
}

/// Rolls out `batch_size` independent joint episodes in parallel.
pub fn sample_batch<R: Rng + ?Sized>(
    policy: &TabularPolicy,
    env: &EnvConfig,
    reward: &RewardParams,
    valuation: Valuation,
    batch_size: usize,
    rng: &mut R,
) -> Result<EpisodeBatch, TrainError> {
    env.validate()?;
    let base = rng.next_u64();
    let machine = RewardMachine::new(*reward);
    let episodes = (0..batch_size)
        .into_par_iter()
        .map(|b| {
            let mut erng = episode_rng(base, b);
            let traj = run_episode_with(env, &mut Sampler(policy), &mut erng)?;
            Ok(score_episode(traj, &env.map, &machine, valuation)?)
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    Ok(EpisodeBatch {
        episodes,
        valuation,
    })
}

/// Batch statistics behind the fitness estimates `f(s, a)` and `f(s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FitnessTable {
    width: usize,
    pair_sum: Vec<Row>,
    pair_count: Vec<[u32; Action::COUNT]>,
    state_sum: Vec<f64>,
    state_count: Vec<u32>,
}

impl FitnessTable {
    pub fn new(map: &GridMap) -> Self {
        let n = map.num_cells();
        Self {
            width: map.width(),
            pair_sum: vec![[0.0; Action::COUNT]; n],
            pair_count: vec![[0; Action::COUNT]; n],
            state_sum: vec![0.0; n],
            state_count: vec![0; n],
        }
    }

    fn idx(&self, cell: crate::gridworld::Cell) -> usize {
        cell.y * self.width + cell.x
    }

    pub fn record_pair(&mut self, cell: crate::gridworld::Cell, action: Action, value: f64) {
        let i = self.idx(cell);
        self.pair_sum[i][action.index()] += value;
        self.pair_count[i][action.index()] += 1;
    }

    pub fn record_state(&mut self, cell: crate::gridworld::Cell, value: f64) {
        let i = self.idx(cell);
        self.state_sum[i] += value;
        self.state_count[i] += 1;
    }

    pub fn count(&self, cell: crate::gridworld::Cell, action: Action) -> u32 {
        self.pair_count[self.idx(cell)][action.index()]
    }

    /// Mean return over trajectories containing the pair; `None` if unseen.
    pub fn pair(&self, cell: crate::gridworld::Cell, action: Action) -> Option<f64> {
        let i = self.idx(cell);
        let n = self.pair_count[i][action.index()];
        (n > 0).then(|| self.pair_sum[i][action.index()] / n as f64)
    }

    pub fn state(&self, cell: crate::gridworld::Cell) -> Option<f64> {
        let i = self.idx(cell);
        let n = self.state_count[i];
        (n > 0).then(|| self.state_sum[i] / n as f64)
    }
}

/// Credits each agent trajectory's return once to every distinct pair (and
/// cell) it contains.
pub fn estimate_fitness(batch: &EpisodeBatch, map: &GridMap, mode: FitnessMode) -> FitnessTable {
    let mut table = FitnessTable::new(map);
    let n = map.num_cells();
    let mut seen_pair = vec![[false; Action::COUNT]; n];
    let mut seen_state = vec![false; n];
    for episode in &batch.episodes {
        for (k, agent) in episode.trajectory.agents.iter().enumerate() {
            let ret = episode.returns[k];
            let weights = &episode.weights[k];
            let mut touched = Vec::new();
            for (t, (&cell, &action)) in agent.cells.iter().zip(&agent.actions).enumerate() {
                let i = map.index(cell);
                if seen_pair[i][action.index()] {
                    continue;
                }
                seen_pair[i][action.index()] = true;
                touched.push(i);
                let value = match mode {
                    FitnessMode::Trajectory => ret,
                    FitnessMode::ReturnToGo => batch
                        .valuation
                        .valuate(&weights[t..])
                        .expect("suffix of a non-empty weight sequence"),
                };
                table.record_pair(cell, action, value);
            }
            for (t, &cell) in agent.cells.iter().enumerate() {
                let i = map.index(cell);
                if seen_state[i] {
                    continue;
                }
                seen_state[i] = true;
                let value = match mode {
                    FitnessMode::Trajectory => ret,
                    FitnessMode::ReturnToGo => batch
                        .valuation
                        .valuate(&weights[t.min(weights.len())..])
                        .unwrap_or(0.0),
                };
                table.record_state(cell, value);
            }
            for i in touched {
                seen_pair[i] = [false; Action::COUNT];
            }
            for &cell in &agent.cells {
                seen_state[map.index(cell)] = false;
            }
        }
    }
    table
}

/// Replicator step for one policy row.
///
/// Observed actions are those with a fitness estimate. Their fitness is
/// shifted so the smallest becomes 1, the replicator target is computed among
/// them and scaled to the probability mass they held, and the row moves a
/// fraction `alpha` of the way to that target. Unobserved actions keep their
/// mass.
pub fn replicator_row(row: &Row, fitness: &[Option<f64>; Action::COUNT], alpha: f64) -> Row {
    let observed: Vec<usize> = (0..Action::COUNT).filter(|&a| fitness[a].is_some()).collect();
    if observed.is_empty() {
        return *row;
    }
    let min = observed
        .iter()
        .map(|&a| fitness[a].unwrap())
        .fold(f64::INFINITY, f64::min);
    let shifted = |a: usize| fitness[a].unwrap() - min + 1.0;
    let mass: f64 = observed.iter().map(|&a| row[a]).sum();
    let denom: f64 = observed.iter().map(|&a| row[a] * shifted(a)).sum();
    if denom <= 0.0 {
        return *row;
    }
    let mut out = *row;
    for &a in &observed {
        let target = mass * row[a] * shifted(a) / denom;
        out[a] = (1.0 - alpha) * row[a] + alpha * target;
    }
    normalized(out)
}

pub fn replicator_update(policy: &TabularPolicy, fitness: &FitnessTable, alpha: f64) -> TabularPolicy {
    let mut out = policy.clone();
    for cell in policy.cells() {
        let f: [Option<f64>; Action::COUNT] = std::array::from_fn(|a| fitness.pair(cell, Action::ALL[a]));
        *out.row_mut(cell) = replicator_row(policy.row(cell), &f, alpha);
    }
    out
}

/// `w · uniform + (1 − w) · policy`, row by row.
pub fn mix_with_uniform(policy: &TabularPolicy, w: f64) -> TabularPolicy {
    policy.map_rows(|row| {
        std::array::from_fn(|a| w * UNIFORM_ROW[a] + (1.0 - w) * row[a])
    })
}

/// Monte-Carlo estimate of the all-agent return of a policy.
pub fn expected_return<R: Rng + ?Sized>(
    policy: &TabularPolicy,
    env: &EnvConfig,
    reward: &RewardParams,
    valuation: Valuation,
    episodes: usize,
    rng: &mut R,
) -> Result<f64, TrainError> {
    if episodes == 0 {
        return Err(TrainError::Param {
            name: "episodes",
            message: "must be at least 1".into(),
        });
    }
    Ok(sample_batch(policy, env, reward, valuation, episodes, rng)?.expected_return())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Converged,
    IterationCap,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Termination::Converged => "converged",
            Termination::IterationCap => "iteration_cap",
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Policy as returned by training, still blended with the uniform policy.
    pub policy: TabularPolicy,
    /// Exploration weight blended into `policy`.
    pub exploration_weight: f64,
    /// Batch expected return of every iteration.
    pub returns: Vec<f64>,
    pub iterations: usize,
    pub wall_seconds: f64,
    pub termination: Termination,
}

impl TrainReport {
    /// The trained policy without the uniform exploration component.
    pub fn exploit_policy(&self) -> TabularPolicy {
        self.policy.unmix(self.exploration_weight)
    }
}

/// Snapshot of one applied update, handed to training observers.
pub struct UpdateRecord<'a> {
    pub iteration: usize,
    pub expected_return: f64,
    pub before: &'a TabularPolicy,
    pub fitness: &'a FitnessTable,
    pub after_replicator: &'a TabularPolicy,
    pub after_mix: &'a TabularPolicy,
    pub exploration_weight: f64,
}

/// Training state; exposes single iterations for callers that drive the loop
/// themselves.
pub struct Trainer {
    config: TrainConfig,
    policy: TabularPolicy,
    weight: f64,
    returns: Vec<f64>,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: TrainConfig, seed: u64) -> Result<Self, TrainError> {
        config.validate()?;
        Ok(Self {
            policy: TabularPolicy::uniform(&config.env.map),
            weight: config.initial_weight,
            returns: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            config,
        })
    }

    pub fn policy(&self) -> &TabularPolicy {
        &self.policy
    }

    pub fn exploration_weight(&self) -> f64 {
        self.weight
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    /// Samples a batch with the current policy and records its return.
    pub fn sample(&mut self) -> Result<EpisodeBatch, TrainError> {
        let c = &self.config;
        let batch = sample_batch(
            &self.policy,
            &c.env,
            &c.reward,
            c.valuation,
            c.batch_size,
            &mut self.rng,
        )?;
        self.returns.push(batch.expected_return());
        Ok(batch)
    }

    /// Fitness estimation, replicator step, weight decay and uniform mixing.
    pub fn update(&mut self, batch: &EpisodeBatch, mut observer: impl FnMut(&UpdateRecord<'_>)) {
        let c = &self.config;
        let fitness = estimate_fitness(batch, &c.env.map, c.fitness);
        let replicated = replicator_update(&self.policy, &fitness, c.learning_rate);
        self.weight = c.exploration_floor.max(self.weight - c.weight_decrement);
        let mixed = mix_with_uniform(&replicated, self.weight);
        observer(&UpdateRecord {
            iteration: self.returns.len(),
            expected_return: batch.expected_return(),
            before: &self.policy,
            fitness: &fitness,
            after_replicator: &replicated,
            after_mix: &mixed,
            exploration_weight: self.weight,
        });
        self.policy = mixed;
    }
}

pub fn train(config: TrainConfig, seed: u64) -> Result<TrainReport, TrainError> {
    train_observed(config, seed, |_| {})
}

/// Runs training to convergence or the iteration cap.
///
/// The first batch always leads to an update. Afterwards, once `patience`
/// consecutive iterations each improved on their predecessor by less than
/// the threshold, training ends and returns the policy that produced the
/// last batch.
pub fn train_observed(
    config: TrainConfig,
    seed: u64,
    mut observer: impl FnMut(&UpdateRecord<'_>),
) -> Result<TrainReport, TrainError> {
    let start = Instant::now();
    let threshold = config.convergence_threshold;
    let cap = config.max_iterations;
    let patience = config.patience;
    let mut trainer = Trainer::new(config, seed)?;
    let mut previous = f64::NEG_INFINITY;
    let mut stalled = 0;
    let termination = loop {
        let batch = trainer.sample()?;
        let eta = batch.expected_return();
        if eta - previous < threshold {
            stalled += 1;
            if stalled >= patience {
                break Termination::Converged;
            }
        } else {
            stalled = 0;
        }
        if trainer.returns.len() >= cap {
            break Termination::IterationCap;
        }
        trainer.update(&batch, &mut observer);
        previous = eta;
    };
    Ok(TrainReport {
        iterations: trainer.returns.len(),
        exploration_weight: trainer.weight,
        returns: trainer.returns,
        policy: trainer.policy,
        wall_seconds: start.elapsed().as_secs_f64(),
        termination,
    })
}
