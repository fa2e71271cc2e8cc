//! TOML run configuration.
//!
//! Every section is optional and unknown keys are rejected. Values can be
//! overridden with `section.key=value` strings before validation.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{EpsilonSchedule, MonteCarloParams, QLearningParams};
use crate::bench::{generate_map, Algorithm, BenchError, EvalMode, RewardSpec, SolverSettings, SuiteConfig};
use crate::egt::{EgtSettings, FitnessMode};
use crate::gridworld::{default_horizon, parse_map, EnvConfig, EnvError, GridMap, MapError};
use crate::reward::{RewardError, RewardParams, Valuation};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("bad override {0:?}: expected section.key=value")]
    Override(String),
    #[error("{0}")]
    Invalid(String),
    #[error("map {path}: {source}")]
    Map { path: PathBuf, source: MapError },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Bench(#[from] BenchError),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvSection,
    pub reward: RewardSection,
    pub egt: EgtSection,
    pub qlearning: QLearningSection,
    pub montecarlo: MonteCarloSection,
    pub eval: EvalSection,
    pub suite: SuiteSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    /// Map file; when absent a random map is generated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<PathBuf>,
    pub width: usize,
    pub height: usize,
    pub density: f64,
    pub map_seed: u64,
    pub agents: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    pub slip: f64,
    pub seed: u64,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            map: None,
            width: 20,
            height: 20,
            density: 0.1,
            map_seed: 0,
            agents: 2,
            horizon: None,
            slip: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub step_penalty: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub goal_reward: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collision_penalty: Option<f64>,
    pub gamma: f64,
    /// `sum`, `avg` or `discounted:<gamma>`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valuation: Option<String>,
}

impl Default for RewardSection {
    fn default() -> Self {
        Self {
            step_penalty: 1.0,
            goal_reward: None,
            collision_penalty: None,
            gamma: 0.99,
            valuation: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EgtSection {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decrement: f64,
    pub exploration_floor: f64,
    pub initial_weight: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence_threshold: Option<f64>,
    pub patience: usize,
    pub max_iterations: usize,
    /// `trajectory` or `return_to_go`.
    pub fitness: String,
}

impl Default for EgtSection {
    fn default() -> Self {
        let d = EgtSettings::default();
        Self {
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            weight_decrement: d.weight_decrement,
            exploration_floor: d.exploration_floor,
            initial_weight: d.initial_weight,
            convergence_threshold: None,
            patience: d.patience,
            max_iterations: d.max_iterations,
            fitness: d.fitness.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QLearningSection {
    pub learning_rate: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
    pub epsilon_floor: f64,
    pub episodes: usize,
}

impl Default for QLearningSection {
    fn default() -> Self {
        let d = QLearningParams::default();
        Self {
            learning_rate: d.learning_rate,
            gamma: d.gamma,
            epsilon_start: d.epsilon.start,
            epsilon_decay: d.epsilon.decay,
            epsilon_floor: d.epsilon.floor,
            episodes: d.episodes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloSection {
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
    pub epsilon_floor: f64,
    pub episodes: usize,
    pub batch_size: usize,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        let d = MonteCarloParams::default();
        Self {
            gamma: d.gamma,
            epsilon_start: d.epsilon.start,
            epsilon_decay: d.epsilon.decay,
            epsilon_floor: d.epsilon.floor,
            episodes: d.episodes,
            batch_size: d.batch_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub episodes: usize,
    /// `stochastic` or `greedy`.
    pub mode: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            episodes: 100,
            mode: EvalMode::default().to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSection {
    pub sizes: Vec<usize>,
    pub agents: Vec<usize>,
    pub algorithms: Vec<String>,
    pub seeds: Vec<u64>,
    pub density: f64,
    pub eval_episodes: usize,
    pub output: PathBuf,
}

impl Default for SuiteSection {
    fn default() -> Self {
        Self {
            sizes: vec![20],
            agents: vec![2],
            algorithms: Algorithm::ALL.iter().map(|a| a.name().to_owned()).collect(),
            seeds: vec![0],
            density: 0.1,
            eval_episodes: 100,
            output: PathBuf::from("bench.csv"),
        }
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, value) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(spec.to_owned()))?;
    let (section, field) = key
        .trim()
        .split_once('.')
        .ok_or_else(|| ConfigError::Override(spec.to_owned()))?;
    if section.is_empty() || field.is_empty() {
        return Err(ConfigError::Override(spec.to_owned()));
    }
    let entry = table
        .entry(section.to_owned())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let toml::Value::Table(inner) = entry else {
        return Err(ConfigError::Override(spec.to_owned()));
    };
    inner.insert(field.to_owned(), override_value(value.trim()));
    Ok(())
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = toml::from_str(text)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: RunConfig = table.try_into()?;
        config.check()?;
        Ok(config)
    }

    /// Reads `path` when given, otherwise starts from defaults.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.to_owned(),
                source,
            })?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    /// Validates enumerated string fields.
    pub fn check(&self) -> Result<(), ConfigError> {
        self.valuation()?;
        self.egt_settings()?;
        self.eval_mode()?;
        self.algorithms()?;
        if !(0.0..1.0).contains(&self.env.slip) {
            return Err(invalid(format!("env.slip {} must lie in [0, 1)", self.env.slip)));
        }
        Ok(())
    }

    pub fn valuation(&self) -> Result<Option<Valuation>, ConfigError> {
        self.reward
            .valuation
            .as_deref()
            .map(|v| v.parse().map_err(|e: String| invalid(format!("reward.valuation: {e}"))))
            .transpose()
    }

    pub fn eval_mode(&self) -> Result<EvalMode, ConfigError> {
        self.eval.mode.parse().map_err(|e: String| invalid(format!("eval.mode: {e}")))
    }

    pub fn algorithms(&self) -> Result<Vec<Algorithm>, ConfigError> {
        self.suite
            .algorithms
            .iter()
            .map(|a| a.parse().map_err(|e: String| invalid(format!("suite.algorithms: {e}"))))
            .collect()
    }

    /// The map named in `[env]`, or a generated one.
    pub fn map(&self) -> Result<GridMap, ConfigError> {
        match &self.env.map {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                parse_map(&text).map_err(|source| ConfigError::Map {
                    path: path.clone(),
                    source,
                })
            }
            None => Ok(generate_map(
                self.env.width,
                self.env.height,
                self.env.density,
                self.env.map_seed,
            )?),
        }
    }

    pub fn env_config(&self, map: GridMap) -> Result<EnvConfig, ConfigError> {
        let horizon = self.env.horizon.unwrap_or_else(|| default_horizon(&map));
        let env = EnvConfig::new(Arc::new(map), self.env.agents)
            .with_horizon(horizon)
            .with_slip(self.env.slip)
            .with_seed(self.env.seed);
        env.validate()?;
        Ok(env)
    }

    pub fn reward_spec(&self) -> RewardSpec {
        RewardSpec {
            step_penalty: self.reward.step_penalty,
            goal_reward: self.reward.goal_reward,
            collision_penalty: self.reward.collision_penalty,
            gamma: self.reward.gamma,
        }
    }

    /// Reward constants; unset `b` and `c` default to `10·T`.
    pub fn reward_params(&self, horizon: usize) -> Result<RewardParams, ConfigError> {
        Ok(self.reward_spec().resolve(horizon)?)
    }

    pub fn egt_settings(&self) -> Result<EgtSettings, ConfigError> {
        let e = &self.egt;
        let fitness: FitnessMode = e
            .fitness
            .parse()
            .map_err(|m: String| invalid(format!("egt.fitness: {m}")))?;
        Ok(EgtSettings {
            valuation: self.valuation()?,
            batch_size: e.batch_size,
            learning_rate: e.learning_rate,
            weight_decrement: e.weight_decrement,
            exploration_floor: e.exploration_floor,
            initial_weight: e.initial_weight,
            convergence_threshold: e.convergence_threshold,
            patience: e.patience,
            max_iterations: e.max_iterations,
            fitness,
        })
    }

    pub fn qlearning_params(&self) -> QLearningParams {
        let q = &self.qlearning;
        QLearningParams {
            learning_rate: q.learning_rate,
            gamma: q.gamma,
            epsilon: EpsilonSchedule {
                start: q.epsilon_start,
                decay: q.epsilon_decay,
                floor: q.epsilon_floor,
            },
            episodes: q.episodes,
        }
    }

    pub fn montecarlo_params(&self) -> MonteCarloParams {
        let m = &self.montecarlo;
        MonteCarloParams {
            gamma: m.gamma,
            epsilon: EpsilonSchedule {
                start: m.epsilon_start,
                decay: m.epsilon_decay,
                floor: m.epsilon_floor,
            },
            episodes: m.episodes,
            batch_size: m.batch_size,
        }
    }

    pub fn suite_config(&self) -> Result<SuiteConfig, ConfigError> {
        Ok(SuiteConfig {
            sizes: self.suite.sizes.clone(),
            agent_counts: self.suite.agents.clone(),
            algorithms: self.algorithms()?,
            eval_episodes: self.suite.eval_episodes,
            seeds: self.suite.seeds.clone(),
            density: self.suite.density,
            output: self.suite.output.clone(),
            settings: SolverSettings {
                horizon: self.env.horizon,
                reward: self.reward_spec(),
                egt: self.egt_settings()?,
                qlearning: self.qlearning_params(),
                montecarlo: self.montecarlo_params(),
                eval_mode: self.eval_mode()?,
            },
            header: self.echo_lines(),
        })
    }

    /// The configuration as TOML, one line per entry, for echoing into
    /// output headers.
    pub fn echo_lines(&self) -> Vec<String> {
        toml::to_string(self)
            .unwrap_or_default()
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::to_owned)
            .collect()
    }

    /// A copy with derived defaults written out for the given horizon.
    pub fn effective(&self, horizon: usize, agents: usize) -> RunConfig {
        let mut c = self.clone();
        let big = 10.0 * horizon.max(1) as f64;
        c.env.horizon = Some(horizon);
        c.env.agents = agents;
        let b = *c.reward.goal_reward.get_or_insert(big);
        c.reward.collision_penalty.get_or_insert(big);
        if c.reward.valuation.is_none() {
            c.reward.valuation = Some(Valuation::DiscountedSum(c.reward.gamma).to_string());
        }
        c.egt
            .convergence_threshold
            .get_or_insert(0.01 * agents as f64 * b);
        c
    }
}
