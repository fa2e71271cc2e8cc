//! Evaluation metrics, random maps and the benchmark suite.

use std::collections::VecDeque;
use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::baselines::{monte_carlo_train, qlearning_train, AStarPlanner, MonteCarloParams, QLearningParams};
use crate::egt::{episode_rng, train, EgtSettings, TrainError};
use crate::gridworld::{
    run_episode_with, AgentTrajectory, Cell, EnvConfig, EnvError, GridMap, Trajectory,
};
use crate::policy::{Sampler, TabularPolicy};
use crate::reward::RewardParams;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("obstacle density {0} must lie in [0, 1)")]
    Density(f64),
    #[error("{width}x{height} grid has no room for {obstacles} obstacles and {goals} goals")]
    Crowded {
        width: usize,
        height: usize,
        obstacles: usize,
        goals: usize,
    },
    #[error("no connected {width}x{height} map at density {density} after {attempts} attempts")]
    Disconnected {
        width: usize,
        height: usize,
        density: f64,
        attempts: usize,
    },
    #[error("suite configuration: {0}")]
    Config(String),
}

/// Manhattan distance from every cell to its nearest obstacle, computed by a
/// breadth-first sweep over the open grid.
#[derive(Clone, Debug)]
pub struct ObstacleField {
    width: usize,
    dist: Option<Vec<usize>>,
}

impl ObstacleField {
    pub fn new(map: &GridMap) -> Self {
        let width = map.width();
        if !map.has_obstacles() {
            return Self { width, dist: None };
        }
        let mut dist = vec![usize::MAX; map.num_cells()];
        let mut queue = VecDeque::new();
        for c in map.obstacles() {
            dist[map.index(c)] = 0;
            queue.push_back(c);
        }
        while let Some(c) = queue.pop_front() {
            let d = dist[map.index(c)];
            let (x, y) = (c.x as isize, c.y as isize);
            for (nx, ny) in [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)] {
                if map.contains(nx, ny) {
                    let n = Cell::new(nx as usize, ny as usize);
                    let j = map.index(n);
                    if dist[j] == usize::MAX {
                        dist[j] = d + 1;
                        queue.push_back(n);
                    }
                }
            }
        }
        Self {
            width,
            dist: Some(dist),
        }
    }

    pub fn at(&self, cell: Cell) -> Option<usize> {
        self.dist.as_ref().map(|d| d[cell.y * self.width + cell.x])
    }

    /// Smallest obstacle distance over the cells an agent visited.
    pub fn min_along(&self, cells: &[Cell]) -> Option<usize> {
        let dist = self.dist.as_ref()?;
        cells.iter().map(|c| dist[c.y * self.width + c.x]).min()
    }
}

/// Minimum Manhattan distance to an obstacle along one agent's path, or `None`
/// when the map has no obstacles.
pub fn obstacle_distance(traj: &AgentTrajectory, map: &GridMap) -> Option<f64> {
    ObstacleField::new(map)
        .min_along(&traj.cells)
        .map(|d| d as f64)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metrics {
    pub episodes: usize,
    pub agent_episodes: usize,
    pub successes: usize,
    /// Mean arrival time over agents that reached a goal.
    pub mean_timesteps: Option<f64>,
    pub success_rate: f64,
    /// Mean over agent-episodes of the closest approach to an obstacle.
    pub obstacle_distance: Option<f64>,
    pub collisions_per_episode: f64,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

impl Metrics {
    pub fn from_trajectories(trajectories: &[Trajectory], map: &GridMap) -> Self {
        let field = ObstacleField::new(map);
        let mut m = Metrics {
            episodes: trajectories.len(),
            ..Default::default()
        };
        let mut arrival_sum = 0usize;
        let mut distance_sum = 0usize;
        let mut collisions = 0usize;
        for traj in trajectories {
            collisions += traj.collisions();
            for agent in &traj.agents {
                m.agent_episodes += 1;
                if let Some(t) = agent.reached_at {
                    m.successes += 1;
                    arrival_sum += t;
                }
                if let Some(d) = field.min_along(&agent.cells) {
                    distance_sum += d;
                }
            }
        }
        if m.agent_episodes > 0 {
            m.success_rate = m.successes as f64 / m.agent_episodes as f64;
            if field.dist.is_some() {
                m.obstacle_distance = Some(distance_sum as f64 / m.agent_episodes as f64);
            }
        }
        if m.successes > 0 {
            m.mean_timesteps = Some(arrival_sum as f64 / m.successes as f64);
        }
        if m.episodes > 0 {
            m.collisions_per_episode = collisions as f64 / m.episodes as f64;
        }
        m
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.3}"));
        writeln!(f, "episodes:               {}", self.episodes)?;
        writeln!(f, "success rate:           {:.4}", self.success_rate)?;
        writeln!(f, "mean timesteps to goal: {}", opt(self.mean_timesteps))?;
        writeln!(f, "obstacle distance:      {}", opt(self.obstacle_distance))?;
        writeln!(f, "collisions per episode: {:.4}", self.collisions_per_episode)?;
        writeln!(f, "train seconds:          {:.3}", self.train_seconds)?;
        write!(f, "eval seconds:           {:.3}", self.eval_seconds)
    }
}

/// What drives the agents during evaluation.
#[derive(Clone, Copy, Debug)]
pub enum Solver<'a> {
    /// Sample actions from a frozen policy.
    Policy(&'a TabularPolicy),
    /// Plan each agent with A* and follow the plan.
    AStar,
}

/// Rolls out `episodes` evaluation episodes. Episode `e` uses the generator
/// derived from `seed` and `e`, so every solver sees the same start draws.
pub fn rollouts(solver: Solver<'_>, env: &EnvConfig, episodes: usize, seed: u64) -> Result<Vec<Trajectory>, EnvError> {
    env.validate()?;
    (0..episodes)
        .into_par_iter()
        .map(|e| {
            let mut rng = episode_rng(seed, e);
            match solver {
                Solver::Policy(p) => run_episode_with(env, &mut Sampler(p), &mut rng),
                Solver::AStar => run_episode_with(env, &mut AStarPlanner::new(&env.map), &mut rng),
            }
        })
        .collect()
}

pub fn evaluate(solver: Solver<'_>, env: &EnvConfig, episodes: usize, seed: u64) -> Result<Metrics, EnvError> {
    let start = Instant::now();
    let trajectories = rollouts(solver, env, episodes, seed)?;
    let mut m = Metrics::from_trajectories(&trajectories, &env.map);
    m.eval_seconds = start.elapsed().as_secs_f64();
    Ok(m)
}

pub const MAP_RETRIES: usize = 100;

/// One goal per 50×50 region, at least one.
pub fn goal_count(width: usize, height: usize) -> usize {
    (width * height / 2500).max(1)
}

/// Every free cell can reach some goal.
pub fn is_connected(map: &GridMap) -> bool {
    let mut seen = vec![false; map.num_cells()];
    let mut queue: VecDeque<Cell> = map.goals().iter().copied().collect();
    for &g in map.goals() {
        seen[map.index(g)] = true;
    }
    while let Some(c) = queue.pop_front() {
        for n in map.successors(c) {
            let j = map.index(n);
            if !seen[j] {
                seen[j] = true;
                queue.push_back(n);
            }
        }
    }
    map.free_cells().all(|c| seen[map.index(c)])
}

/// Random map with `round(density · cells)` obstacles and [`goal_count`]
/// goals. Layouts leaving any free cell cut off from every goal are redrawn,
/// up to [`MAP_RETRIES`] times.
pub fn generate_map(width: usize, height: usize, density: f64, seed: u64) -> Result<GridMap, BenchError> {
    if !(0.0..1.0).contains(&density) {
        return Err(BenchError::Density(density));
    }
    let n = width * height;
    let obstacles = (density * n as f64).round() as usize;
    let goals = goal_count(width, height);
    if n == 0 || obstacles + goals >= n {
        return Err(BenchError::Crowded {
            width,
            height,
            obstacles,
            goals,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: Vec<usize> = (0..n).collect();
    for _ in 0..MAP_RETRIES {
        cells.shuffle(&mut rng);
        let at = |i: usize| Cell::new(i % width, i / width);
        let map = GridMap::new(
            width,
            height,
            cells[..obstacles].iter().map(|&i| at(i)),
            cells[obstacles..obstacles + goals].iter().map(|&i| at(i)),
            None,
        )
        .expect("disjoint in-bounds cells");
        if is_connected(&map) {
            return Ok(map);
        }
    }
    Err(BenchError::Disconnected {
        width,
        height,
        density,
        attempts: MAP_RETRIES,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Egt,
    AStar,
    QLearning,
    MonteCarlo,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Egt,
        Algorithm::AStar,
        Algorithm::QLearning,
        Algorithm::MonteCarlo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Egt => "egt",
            Algorithm::AStar => "astar",
            Algorithm::QLearning => "qlearning",
            Algorithm::MonteCarlo => "montecarlo",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s.trim())
            .ok_or_else(|| format!("unknown algorithm {s:?} (expected egt, astar, qlearning or montecarlo)"))
    }
}

/// How a trained policy is rolled out during evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EvalMode {
    /// Sample from the policy with the exploration mixture removed.
    #[default]
    Stochastic,
    /// Always take the most likely action.
    Greedy,
}

impl FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stochastic" => Ok(Self::Stochastic),
            "greedy" => Ok(Self::Greedy),
            other => Err(format!("unknown evaluation mode {other:?}")),
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Stochastic => "stochastic",
            Self::Greedy => "greedy",
        })
    }
}

/// Reward constants with `b` and `c` left open until the horizon is known.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardSpec {
    pub step_penalty: f64,
    pub goal_reward: Option<f64>,
    pub collision_penalty: Option<f64>,
    pub gamma: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self {
            step_penalty: 1.0,
            goal_reward: None,
            collision_penalty: None,
            gamma: 0.99,
        }
    }
}

impl RewardSpec {
    /// Unset `b` and `c` become `10·T`.
    pub fn resolve(&self, horizon: usize) -> Result<RewardParams, crate::reward::RewardError> {
        let big = 10.0 * horizon.max(1) as f64;
        RewardParams::new(
            self.step_penalty,
            self.goal_reward.unwrap_or(big),
            self.collision_penalty.unwrap_or(big),
            horizon,
            self.gamma,
        )
    }
}

/// Training knobs for every algorithm, applied to each suite cell. Horizon
/// and reward constants default from the map size when unset.
#[derive(Clone, Debug, Default)]
pub struct SolverSettings {
    pub horizon: Option<usize>,
    pub reward: RewardSpec,
    pub egt: EgtSettings,
    pub qlearning: QLearningParams,
    pub montecarlo: MonteCarloParams,
    pub eval_mode: EvalMode,
}

/// A trained or planned solver ready for evaluation.
pub enum Trained {
    Policy(TabularPolicy),
    AStar,
}

impl Trained {
    pub fn solver(&self) -> Solver<'_> {
        match self {
            Trained::Policy(p) => Solver::Policy(p),
            Trained::AStar => Solver::AStar,
        }
    }
}

/// Trains `algorithm` on `env`. Returns the solver and training seconds.
pub fn train_algorithm(
    algorithm: Algorithm,
    env: &EnvConfig,
    reward: &RewardParams,
    settings: &SolverSettings,
    seed: u64,
) -> Result<(Trained, f64), BenchError> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trained = match algorithm {
        Algorithm::AStar => Trained::AStar,
        Algorithm::Egt => {
            let config = settings.egt.config(env.clone(), *reward);
            let report = train(config, rng.next_u64())?;
            let policy = report.exploit_policy();
            Trained::Policy(match settings.eval_mode {
                EvalMode::Stochastic => policy,
                EvalMode::Greedy => policy.greedy(),
            })
        }
        Algorithm::QLearning => {
            Trained::Policy(qlearning_train(env, &settings.qlearning, reward, &mut rng)?.0)
        }
        Algorithm::MonteCarlo => {
            Trained::Policy(monte_carlo_train(env, &settings.montecarlo, reward, &mut rng)?.0)
        }
    };
    Ok((trained, start.elapsed().as_secs_f64()))
}

#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub sizes: Vec<usize>,
    pub agent_counts: Vec<usize>,
    pub algorithms: Vec<Algorithm>,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub density: f64,
    pub output: PathBuf,
    pub settings: SolverSettings,
    /// Lines echoed as `#` comments above the CSV header.
    pub header: Vec<String>,
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let empty = |name: &str| BenchError::Config(format!("{name} must not be empty"));
        if self.sizes.is_empty() {
            return Err(empty("sizes"));
        }
        if self.agent_counts.is_empty() {
            return Err(empty("agents"));
        }
        if self.algorithms.is_empty() {
            return Err(empty("algorithms"));
        }
        if self.seeds.is_empty() {
            return Err(empty("seeds"));
        }
        if self.eval_episodes == 0 {
            return Err(BenchError::Config("eval episodes must be positive".into()));
        }
        Ok(())
    }
}

pub const CSV_HEADER: [&str; 11] = [
    "algorithm",
    "grid_size",
    "num_agents",
    "seed",
    "success_rate",
    "mean_timesteps",
    "obstacle_distance",
    "train_seconds",
    "eval_seconds",
    "collisions_per_episode",
    "error",
];

/// One line of the benchmark CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteRow {
    pub algorithm: Algorithm,
    pub grid_size: String,
    pub num_agents: usize,
    pub seed: u64,
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
}

impl SuiteRow {
    pub fn record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_owned(), |v| format!("{v:.6}"));
        let m = self.metrics.as_ref();
        vec![
            self.algorithm.to_string(),
            self.grid_size.clone(),
            self.num_agents.to_string(),
            self.seed.to_string(),
            opt(m.map(|m| m.success_rate)),
            opt(m.and_then(|m| m.mean_timesteps)),
            opt(m.and_then(|m| m.obstacle_distance)),
            opt(m.map(|m| m.train_seconds)),
            opt(m.map(|m| m.eval_seconds)),
            opt(m.map(|m| m.collisions_per_episode)),
            self.error.clone().unwrap_or_default(),
        ]
    }
}

pub fn grid_label(width: usize, height: usize) -> String {
    if width == height {
        width.to_string()
    } else {
        format!("{width}x{height}")
    }
}

/// CSV writer that prefixes the file with `#` comment lines and flushes after
/// every row, so an interrupted run still leaves a well-formed file.
pub struct CsvReport<W: Write> {
    writer: csv::Writer<W>,
}

impl CsvReport<BufWriter<File>> {
    /// Creates the file, or appends to it when it already has content.
    pub fn open(path: &std::path::Path, header: &[String], append: bool) -> Result<Self, BenchError> {
        let exists = append && path.metadata().map(|m| m.len() > 0).unwrap_or(false);
        let file = std::fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)?;
        if exists {
            let writer = csv::WriterBuilder::new().from_writer(BufWriter::new(file));
            Ok(Self { writer })
        } else {
            Self::new(BufWriter::new(file), header)
        }
    }
}

impl<W: Write> CsvReport<W> {
    pub fn new(mut out: W, header: &[String]) -> Result<Self, BenchError> {
        for line in header {
            writeln!(out, "# {line}")?;
        }
        let mut writer = csv::WriterBuilder::new().from_writer(out);
        writer.write_record(CSV_HEADER)?;
        writer.flush()?;
        Ok(Self { writer })
    }

    pub fn push(&mut self, row: &SuiteRow) -> Result<(), BenchError> {
        self.writer.write_record(row.record())?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W, BenchError> {
        self.writer
            .into_inner()
            .map_err(|e| BenchError::Io(io::Error::other(e.to_string())))
    }
}

/// Runs one suite cell; failures become the row's error column.
pub fn run_cell(
    algorithm: Algorithm,
    size: usize,
    agents: usize,
    seed: u64,
    config: &SuiteConfig,
) -> SuiteRow {
    let mut row = SuiteRow {
        algorithm,
        grid_size: grid_label(size, size),
        num_agents: agents,
        seed,
        metrics: None,
        error: None,
    };
    let result = (|| -> Result<Metrics, BenchError> {
        let map = generate_map(size, size, config.density, map_seed(seed, size))?;
        let mut env = EnvConfig::new(Arc::new(map), agents).with_seed(seed);
        if let Some(h) = config.settings.horizon {
            env.horizon = h;
        }
        env.validate()?;
        let reward = config
            .settings
            .reward
            .resolve(env.horizon)
            .map_err(|e| BenchError::Config(e.to_string()))?;
        let (trained, train_seconds) = train_algorithm(
            algorithm,
            &env,
            &reward,
            &config.settings,
            seed,
        )?;
        let mut metrics = evaluate(trained.solver(), &env, config.eval_episodes, eval_seed(seed))?;
        metrics.train_seconds = train_seconds;
        Ok(metrics)
    })();
    match result {
        Ok(m) => row.metrics = Some(m),
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

pub fn map_seed(seed: u64, size: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(size as u64)
}

pub fn eval_seed(seed: u64) -> u64 {
    seed.wrapping_add(0x5EED)
}

/// Runs every (size, agents, algorithm, seed) cell in order, appending each
/// row to the output CSV as soon as it finishes.
pub fn run_suite(config: &SuiteConfig) -> Result<Vec<SuiteRow>, BenchError> {
    config.validate()?;
    let file = File::create(&config.output)?;
    let mut report = CsvReport::new(BufWriter::new(file), &config.header)?;
    let mut rows = Vec::new();
    for &size in &config.sizes {
        for &agents in &config.agent_counts {
            for &algorithm in &config.algorithms {
                for &seed in &config.seeds {
                    let row = run_cell(algorithm, size, agents, seed, config);
                    report.push(&row)?;
                    rows.push(row);
                }
            }
        }
    }
    Ok(rows)
}

/// Writes one line per agent per step: `episode,t,agent,x,y,action,event,reward`.
/// The final line of each agent has empty action and event fields.
pub fn write_trajectory_log<W: Write>(
    out: &mut W,
    episode: usize,
    traj: &Trajectory,
    map: &GridMap,
    reward: &RewardParams,
) -> io::Result<()> {
    let machine = crate::reward::RewardMachine::new(*reward);
    for (k, agent) in traj.agents.iter().enumerate() {
        let weights = machine.weights(&crate::reward::observations(agent, map));
        for (t, cell) in agent.cells.iter().enumerate() {
            let (action, event) = match (agent.actions.get(t), agent.events.get(t)) {
                (Some(a), Some(e)) => (a.name(), e.name()),
                _ => ("", ""),
            };
            let w = weights.get(t).map_or_else(String::new, |w| w.to_string());
            writeln!(out, "{episode},{t},{k},{},{},{action},{event},{w}", cell.x, cell.y)?;
        }
    }
    Ok(())
}

pub const TRAJECTORY_LOG_HEADER: &str = "episode,t,agent,x,y,action,event,reward";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{parse_map, Action, StepEvent};

    fn path(cells: &[(usize, usize)]) -> AgentTrajectory {
        AgentTrajectory {
            cells: cells.iter().map(|&(x, y)| Cell::new(x, y)).collect(),
            actions: vec![Action::Right; cells.len().saturating_sub(1)],
            events: vec![StepEvent::Moved; cells.len().saturating_sub(1)],
            reached_at: None,
        }
    }

    #[test]
    fn obstacle_distance_cases() {
        let map = parse_map("....\n.#..\n...G").unwrap();
        assert_eq!(obstacle_distance(&path(&[(0, 0), (1, 0), (2, 0)]), &map), Some(1.0));
        let map = parse_map("#......\n.......\n......G").unwrap();
        assert_eq!(obstacle_distance(&path(&[(2, 1)]), &map), Some(3.0));
        let open = parse_map("...\n..G").unwrap();
        assert_eq!(obstacle_distance(&path(&[(0, 0)]), &open), None);
    }

    #[test]
    fn obstacle_field_is_manhattan() {
        let map = parse_map("#....\n.....\n...#.\n....G").unwrap();
        let field = ObstacleField::new(&map);
        let obstacles: Vec<Cell> = map.obstacles().collect();
        for c in (0..map.num_cells()).map(|i| map.cell_at(i)) {
            let brute = obstacles.iter().map(|o| o.manhattan(c)).min().unwrap();
            assert_eq!(field.at(c), Some(brute));
        }
    }

    #[test]
    fn generated_maps_are_connected_and_seeded() {
        let a = generate_map(20, 20, 0.1, 7).unwrap();
        let b = generate_map(20, 20, 0.1, 7).unwrap();
        assert_eq!(a, b);
        assert!(is_connected(&a));
        assert_eq!(a.obstacles().count(), 40);
        assert_eq!(a.goals().len(), 1);
        let open = generate_map(6, 4, 0.0, 1).unwrap();
        assert!(!open.has_obstacles());
        assert_eq!(generate_map(100, 100, 0.1, 1).unwrap().goals().len(), 4);
    }

    #[test]
    fn generation_rejects_bad_density() {
        assert!(matches!(generate_map(5, 5, 1.2, 0), Err(BenchError::Density(_))));
        assert!(matches!(generate_map(1, 1, 0.0, 0), Err(BenchError::Crowded { .. })));
    }

    #[test]
    fn stay_policy_never_succeeds() {
        let map = parse_map("S...\n....\n...G").unwrap();
        let env = EnvConfig::new(map, 1);
        let stay = TabularPolicy::deterministic(&env.map, |_| Action::Stay);
        let m = evaluate(Solver::Policy(&stay), &env, 5, 1).unwrap();
        assert_eq!(m.success_rate, 0.0);
        assert_eq!(m.mean_timesteps, None);
        assert_eq!(m.obstacle_distance, None);
    }

    #[test]
    fn metrics_are_reproducible() {
        let map = generate_map(8, 8, 0.1, 3).unwrap();
        let env = EnvConfig::new(map, 3);
        let p = TabularPolicy::uniform(&env.map);
        let mut a = evaluate(Solver::Policy(&p), &env, 20, 9).unwrap();
        let mut b = evaluate(Solver::Policy(&p), &env, 20, 9).unwrap();
        a.eval_seconds = 0.0;
        b.eval_seconds = 0.0;
        assert_eq!(a, b);
    }

    #[test]
    fn algorithm_names_parse() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("ppo".parse::<Algorithm>().is_err());
    }

    #[test]
    fn failed_cells_fill_error_column() {
        let config = SuiteConfig {
            sizes: vec![2],
            agent_counts: vec![10],
            algorithms: vec![Algorithm::AStar],
            eval_episodes: 1,
            seeds: vec![0],
            density: 0.0,
            output: PathBuf::new(),
            settings: SolverSettings::default(),
            header: vec![],
        };
        let row = run_cell(Algorithm::AStar, 2, 10, 0, &config);
        assert!(row.metrics.is_none());
        assert!(row.error.as_deref().unwrap().contains("10 agents"));
        let rec = row.record();
        assert_eq!(rec.len(), CSV_HEADER.len());
        assert_eq!(rec[4], "NA");
    }

    #[test]
    fn trajectory_log_lines() {
        let map = parse_map("S.G").unwrap();
        let env = EnvConfig::new(map, 1);
        let traj = rollouts(Solver::AStar, &env, 1, 0).unwrap().remove(0);
        let mut buf = Vec::new();
        write_trajectory_log(&mut buf, 0, &traj, &env.map, &RewardParams::for_horizon(env.horizon)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "0,0,0,0,0,right,moved,-1\n0,1,0,1,0,right,reached_goal,-1\n0,2,0,2,0,,,80\n"
        );
    }
}
