//! Command-line front end: `train`, `eval`, `bench` and `genmap`.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::baselines::{monte_carlo_train, qlearning_train};
use crate::bench::{
    self, evaluate, grid_label, rollouts, write_trajectory_log, Algorithm, BenchError, CsvReport,
    EvalMode, Metrics, Solver, SuiteRow, TRAJECTORY_LOG_HEADER,
};
use crate::config::{ConfigError, RunConfig};
use crate::egt::{train_observed, TrainError};
use crate::gridworld::{EnvError, GridMap};
use crate::policy::{PolicyError, TabularPolicy};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("policy {path}: {source}")]
    Policy { path: PathBuf, source: PolicyError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Usage(String),
    #[error("writing to standard output: {0}")]
    Stdout(io::Error),
}

impl CliError {
    /// True when the reader of standard output went away, e.g. `| head`.
    pub fn is_broken_pipe(&self) -> bool {
        matches!(self, CliError::Stdout(e) if e.kind() == io::ErrorKind::BrokenPipe)
    }
}

macro_rules! say {
    ($($arg:tt)*) => {
        writeln!(io::stdout().lock(), $($arg)*).map_err(CliError::Stdout)?
    };
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "mapf-egt", version, about = "Multi-agent grid pathfinding workbench")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration entry, e.g. `--set egt.batch_size=32`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy and write it with its learning curve.
    Train(TrainArgs),
    /// Evaluate a saved policy or the A* planner.
    Eval(EvalArgs),
    /// Run the benchmark suite and write a CSV report.
    Bench(BenchArgs),
    /// Generate a random connected map.
    Genmap(GenmapArgs),
}

#[derive(Debug, Args)]
pub struct EnvArgs {
    /// Map file; otherwise the `[env]` section generates one.
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub agents: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    /// egt, qlearning or montecarlo.
    #[arg(long, alias = "algo", default_value = "egt")]
    pub algorithm: Algorithm,
    /// Evaluation episodes for the report.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    /// Policy file written by `train`.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Use a planner instead of a policy file (`astar`).
    #[arg(long, alias = "algo")]
    pub algorithm: Option<Algorithm>,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// stochastic or greedy.
    #[arg(long)]
    pub mode: Option<EvalMode>,
    /// Append the metrics as a CSV row.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-step trajectory log.
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, alias = "algos", value_delimiter = ',')]
    pub algorithm: Vec<Algorithm>,
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub agents: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub seed: Vec<u64>,
    /// Evaluation episodes per cell.
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub density: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenmapArgs {
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub height: usize,
    #[arg(long, default_value_t = 0.1)]
    pub density: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn set(overrides: &mut Vec<String>, key: &str, value: Option<impl ToString>) {
    if let Some(v) = value {
        overrides.push(format!("{key}={}", v.to_string()));
    }
}

fn quoted(path: &Path) -> String {
    format!("{:?}", path.display().to_string())
}

fn load(cli_config: Option<&Path>, base: &[String], env: Option<&EnvArgs>) -> Result<RunConfig, CliError> {
    let mut overrides = base.to_vec();
    if let Some(e) = env {
        set(&mut overrides, "env.map", e.map.as_deref().map(quoted));
        set(&mut overrides, "env.agents", e.agents);
        set(&mut overrides, "env.seed", e.seed);
        set(&mut overrides, "env.horizon", e.horizon);
    }
    Ok(RunConfig::load(cli_config, &overrides)?)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Train(args) => {
            let rc = load(config, &cli.overrides, Some(&args.env))?;
            train_cmd(&rc, &args)
        }
        Command::Eval(args) => {
            let rc = load(config, &cli.overrides, Some(&args.env))?;
            eval_cmd(&rc, &args)
        }
        Command::Bench(args) => {
            let mut overrides = cli.overrides.clone();
            let list = |v: &[String]| format!("[{}]", v.join(", "));
            if !args.algorithm.is_empty() {
                let names: Vec<String> = args.algorithm.iter().map(|a| format!("{:?}", a.name())).collect();
                overrides.push(format!("suite.algorithms={}", list(&names)));
            }
            if !args.sizes.is_empty() {
                let v: Vec<String> = args.sizes.iter().map(usize::to_string).collect();
                overrides.push(format!("suite.sizes={}", list(&v)));
            }
            if !args.agents.is_empty() {
                let v: Vec<String> = args.agents.iter().map(usize::to_string).collect();
                overrides.push(format!("suite.agents={}", list(&v)));
            }
            if !args.seed.is_empty() {
                let v: Vec<String> = args.seed.iter().map(u64::to_string).collect();
                overrides.push(format!("suite.seeds={}", list(&v)));
            }
            set(&mut overrides, "suite.eval_episodes", args.episodes);
            set(&mut overrides, "suite.density", args.density);
            set(&mut overrides, "suite.output", args.out.as_deref().map(quoted));
            let rc = RunConfig::load(config, &overrides)?;
            bench_cmd(&rc)
        }
        Command::Genmap(args) => genmap_cmd(&args),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn train_cmd(rc: &RunConfig, args: &TrainArgs) -> Result<(), CliError> {
    let map = rc.map()?;
    let env = rc.env_config(map)?;
    let reward = rc.reward_params(env.horizon)?;
    let effective = rc.effective(env.horizon, env.num_agents);
    let seed = rc.env.seed;
    fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;

    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut header = vec![format!("algorithm = {}", args.algorithm)];
    let (policy, returns) = match args.algorithm {
        Algorithm::Egt => {
            let config = rc.egt_settings()?.config(env.clone(), reward);
            let report = train_observed(config, seed, |_| {})?;
            header.push(format!("iterations = {}", report.iterations));
            header.push(format!("termination = {}", report.termination));
            header.push(format!("exploration_weight = {}", report.exploration_weight));
            let policy = match rc.eval_mode()? {
                EvalMode::Stochastic => report.exploit_policy(),
                EvalMode::Greedy => report.exploit_policy().greedy(),
            };
            (policy, Some(report.returns))
        }
        Algorithm::QLearning => (qlearning_train(&env, &rc.qlearning_params(), &reward, &mut rng)?.0, None),
        Algorithm::MonteCarlo => (
            monte_carlo_train(&env, &rc.montecarlo_params(), &reward, &mut rng)?.0,
            None,
        ),
        Algorithm::AStar => {
            return Err(CliError::Usage("astar needs no training; use `eval --algorithm astar`".into()))
        }
    };
    let train_seconds = start.elapsed().as_secs_f64();
    header.extend(effective.echo_lines());

    let map_path = args.out.join("map.txt");
    fs::write(&map_path, env.map.to_text()).map_err(io_err(&map_path))?;

    let policy_path = args.out.join("policy.txt");
    let mut out = create(&policy_path)?;
    policy
        .write_to(&mut out, &header)
        .and_then(|_| out.flush())
        .map_err(io_err(&policy_path))?;

    if let Some(returns) = &returns {
        let path = args.out.join("returns.csv");
        let mut out = create(&path)?;
        let write = |out: &mut BufWriter<File>| -> io::Result<()> {
            writeln!(out, "iteration,expected_return")?;
            for (i, r) in returns.iter().enumerate() {
                writeln!(out, "{},{r}", i + 1)?;
            }
            out.flush()
        };
        write(&mut out).map_err(io_err(&path))?;
    }

    let episodes = args.episodes.unwrap_or(rc.eval.episodes);
    let mut metrics = evaluate(Solver::Policy(&policy), &env, episodes, bench::eval_seed(seed))?;
    metrics.train_seconds = train_seconds;
    let report_path = args.out.join("report.csv");
    let row = suite_row(args.algorithm, &env.map, env.num_agents, seed, metrics.clone());
    let mut report = CsvReport::new(create(&report_path)?, &effective.echo_lines())?;
    report.push(&row)?;

    say!("trained {} on {}x{} with {} agents", args.algorithm, env.map.width(), env.map.height(), env.num_agents);
    if let Some(r) = returns.as_ref().and_then(|r| r.last()) {
        say!("final expected return:  {r:.3}");
    }
    say!("{metrics}");
    say!("wrote {}", args.out.display());
    Ok(())
}

fn suite_row(algorithm: Algorithm, map: &GridMap, agents: usize, seed: u64, metrics: Metrics) -> SuiteRow {
    SuiteRow {
        algorithm,
        grid_size: grid_label(map.width(), map.height()),
        num_agents: agents,
        seed,
        metrics: Some(metrics),
        error: None,
    }
}

fn eval_cmd(rc: &RunConfig, args: &EvalArgs) -> Result<(), CliError> {
    let map = rc.map()?;
    let env = rc.env_config(map)?;
    let episodes = args.episodes.unwrap_or(rc.eval.episodes);
    let mode = match args.mode {
        Some(m) => m,
        None => rc.eval_mode()?,
    };
    let seed = bench::eval_seed(rc.env.seed);

    let policy = match (&args.policy, args.algorithm) {
        (Some(path), None) => {
            let file = File::open(path).map_err(io_err(path))?;
            let p = TabularPolicy::read_from(BufReader::new(file)).map_err(|source| CliError::Policy {
                path: path.clone(),
                source,
            })?;
            p.check_map(&env.map).map_err(|source| CliError::Policy {
                path: path.clone(),
                source,
            })?;
            Some(match mode {
                EvalMode::Stochastic => p,
                EvalMode::Greedy => p.greedy(),
            })
        }
        (None, Some(Algorithm::AStar)) => None,
        (None, Some(other)) => {
            return Err(CliError::Usage(format!(
                "{other} needs a trained policy; pass --policy"
            )))
        }
        (Some(_), Some(_)) => return Err(CliError::Usage("pass either --policy or --algorithm".into())),
        (None, None) => return Err(CliError::Usage("pass --policy FILE or --algorithm astar".into())),
    };
    let solver = match &policy {
        Some(p) => Solver::Policy(p),
        None => Solver::AStar,
    };
    let metrics = evaluate(solver, &env, episodes, seed)?;
    say!("{metrics}");

    if let Some(path) = &args.out {
        let algorithm = args.algorithm.unwrap_or(Algorithm::Egt);
        let row = suite_row(algorithm, &env.map, env.num_agents, rc.env.seed, metrics);
        let effective = rc.effective(env.horizon, env.num_agents);
        let mut report = CsvReport::open(path, &effective.echo_lines(), true)?;
        report.push(&row)?;
    }
    if let Some(path) = &args.trajectories {
        let reward = rc.reward_params(env.horizon)?;
        let trajectories = rollouts(solver, &env, episodes, seed)?;
        let mut out = create(path)?;
        let write = |out: &mut BufWriter<File>| -> io::Result<()> {
            writeln!(out, "{TRAJECTORY_LOG_HEADER}")?;
            for (e, t) in trajectories.iter().enumerate() {
                write_trajectory_log(out, e, t, &env.map, &reward)?;
            }
            out.flush()
        };
        write(&mut out).map_err(io_err(path))?;
    }
    Ok(())
}

fn bench_cmd(rc: &RunConfig) -> Result<(), CliError> {
    let suite = rc.suite_config()?;
    let rows = bench::run_suite(&suite)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    say!("wrote {} rows to {}", rows.len(), suite.output.display());
    for r in rows.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "{} size {} agents {} seed {}: {}",
            r.algorithm,
            r.grid_size,
            r.num_agents,
            r.seed,
            r.error.as_deref().unwrap_or_default()
        );
    }
    if failed > 0 {
        say!("{failed} cells failed; see the error column");
    }
    Ok(())
}

fn genmap_cmd(args: &GenmapArgs) -> Result<(), CliError> {
    if !(0.0..=0.4).contains(&args.density) {
        return Err(CliError::Usage(format!(
            "density {} must lie in [0, 0.4]",
            args.density
        )));
    }
    let map = bench::generate_map(args.width, args.height, args.density, args.seed)?;
    let text = map.to_text();
    match &args.out {
        Some(path) => fs::write(path, text).map_err(io_err(path))?,
        None => write!(io::stdout().lock(), "{text}").map_err(CliError::Stdout)?,
    }
    Ok(())
}
