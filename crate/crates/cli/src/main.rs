//! `steamkit` command-line driver: solve instances, run learning
//! experiments, validate suboptimality bounds and generate instances.
//!
//! Exit codes: 0 success, 1 input error, 2 infeasible, 3 internal error.
//! Errors are printed to stderr as a single JSON object.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use steamkit::efficacy::MapKind;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "steamkit", version, about = "Efficacy-optimized multi-robot task allocation under time budgets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one instance; writes solution.json and stats.csv.
    Solve(SolveArgs),
    /// Actively learn the instance's efficacy maps; writes metrics.csv and learned models.
    Learn(LearnArgs),
    /// Compare search results with the exhaustive optimum; writes bounds.csv.
    ValidateBounds(BoundsArgs),
    /// Regret and per-step runtime suite on random teams; writes metrics and a summary.
    Bench(BenchArgs),
    /// Generate a random valid instance.
    Gen(GenArgs),
}

#[derive(Debug, Args)]
struct SolveArgs {
    instance: PathBuf,
    /// Trade-off between efficacy (0) and makespan (1); overrides the instance.
    #[arg(long)]
    alpha: Option<f64>,
    /// Time budget C_max; overrides the instance.
    #[arg(long)]
    budget: Option<f64>,
    /// Replace the instance's maps with a saved efficacy model.
    #[arg(long, value_name = "PATH")]
    efficacy_from_model: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Debug, Args)]
struct LearnArgs {
    /// Instance whose maps serve as the synthetic ground truth.
    instance: PathBuf,
    /// Strategies to run (repeatable or comma separated; `all` for every strategy).
    #[arg(long, value_delimiter = ',', default_values = ["exact", "convex-hull", "box", "unconstrained"])]
    strategy: Vec<String>,
    /// Number of queries per run.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, value_delimiter = ',', default_values = ["0"])]
    seed: Vec<u64>,
    /// Record regret against the exhaustive optimum (`off`: best uncovered reward only).
    #[arg(long, value_enum, default_value = "on")]
    oracle: Toggle,
    /// Learner configuration JSON; flags override its strategy, budget and seed.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Standard deviation of Gaussian label noise.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BoundsArgs {
    #[arg(required = true)]
    instances: Vec<PathBuf>,
    /// α values (default 0, 0.1, ..., 1).
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<f64>,
    /// Wall-clock limit per instance for the exhaustive optimum, in seconds.
    #[arg(long, default_value_t = 300.0)]
    oracle_timeout: f64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values = ["4", "8"])]
    robots: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    tasks: usize,
    #[arg(long, default_value_t = 4)]
    traits: usize,
    #[arg(long, value_delimiter = ',', default_values = ["exact", "convex-hull", "box", "unconstrained"])]
    strategy: Vec<String>,
    /// Queries per run.
    #[arg(long, default_value_t = 60)]
    budget: usize,
    #[arg(long, value_delimiter = ',', default_values = ["0", "1", "2", "3", "4"])]
    seed: Vec<u64>,
    #[arg(long, value_enum, default_value = "on")]
    oracle: Toggle,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Generator parameters JSON; flags override individual fields.
    #[arg(long, value_name = "PATH")]
    params: Option<PathBuf>,
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long)]
    robots: Option<usize>,
    #[arg(long)]
    traits: Option<usize>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long)]
    obstacle_density: Option<f64>,
    #[arg(long, value_parser = parse_map_kind)]
    map_kind: Option<MapKind>,
    /// Budget tightness: C_max = rho × worst makespan.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_map_kind(s: &str) -> Result<MapKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown map kind `{s}`"))
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("STEAMKIT_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::input(format!("STEAMKIT_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().map_err(CliError::internal)
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Solve(a) => commands::solve(&a.instance, a.alpha, a.budget, a.efficacy_from_model.as_deref(), &a.out),
        Command::Learn(a) => commands::learn(&commands::LearnRequest {
            instance: a.instance,
            strategies: a.strategy,
            budget: a.budget,
            seeds: a.seed,
            oracle: a.oracle == Toggle::On,
            config: a.config,
            noise: a.noise,
            out: a.out,
        }),
        Command::ValidateBounds(a) => commands::validate_bounds(&a.instances, &a.alpha, a.oracle_timeout, &a.out),
        Command::Bench(a) => commands::bench(&commands::BenchRequest {
            robots: a.robots,
            tasks: a.tasks,
            traits: a.traits,
            strategies: a.strategy,
            budget: a.budget,
            seeds: a.seed,
            oracle: a.oracle == Toggle::On,
            out: a.out,
        }),
        Command::Gen(a) => {
            let overrides = commands::GenOverrides {
                tasks: a.tasks,
                robots: a.robots,
                traits: a.traits,
                width: a.width,
                height: a.height,
                obstacle_density: a.obstacle_density,
                map_kind: a.map_kind,
                rho: a.rho,
                alpha: a.alpha,
            };
            commands::gen(a.params.as_deref(), &overrides, a.seed, a.out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", CliError::input(e.to_string().trim_end()).to_json());
            return ExitCode::from(error::EXIT_INPUT as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
