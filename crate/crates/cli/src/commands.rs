use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::Serialize;
use steamkit::active::{learn as run_learner, ActiveError, LearnerConfig, MetricsRow, RegretOracle, Strategy, SyntheticEvaluator};
use steamkit::efficacy::{EfficacyModel, MapKind};
use steamkit::experiments::{bound_rows, BoundRow, BoundStatus, generate_instance, ground_truth_model, random_team, GenError, GenParams};
use steamkit::model::{load_instance, save_instance, validate_instance, ProblemDomain};
use steamkit::search::{solve_with, SearchConfig, SearchError, SearchReport};

use crate::error::CliError;

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn load(path: &Path) -> Result<ProblemDomain, CliError> {
    let domain = load_instance(&read(path)?).map_err(|e| CliError::model(path, e))?;
    let violations = validate_instance(&domain);
    if violations.is_empty() {
        Ok(domain)
    } else {
        Err(CliError::invalid(violations))
    }
}

fn out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::internal(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::internal(format!("{}: {e}", path.display())))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().has_headers(!rows.is_empty()).from_path(path)?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn search_error(e: SearchError) -> CliError {
    match e {
        SearchError::InvalidInstance(v) => CliError::invalid(v),
        SearchError::Efficacy(e) => CliError::input(e.to_string()),
    }
}

fn active_error(e: ActiveError) -> CliError {
    match e {
        ActiveError::EnumerationCap { .. } | ActiveError::DimensionMismatch { .. } | ActiveError::InvalidConfig(_) => {
            CliError::input(e.to_string())
        }
        ActiveError::Gp(_) | ActiveError::Efficacy(_) => CliError::internal(e),
    }
}

fn check_alpha(alpha: f64) -> Result<(), CliError> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(CliError::input(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}

/// Expands a strategy list; `all` stands for every strategy.
pub fn parse_strategies(names: &[String]) -> Result<Vec<Strategy>, CliError> {
    let mut out = Vec::new();
    for name in names {
        let batch = if name == "all" {
            Strategy::ALL.to_vec()
        } else {
            vec![name.parse::<Strategy>().map_err(|e| CliError::input(e.to_string()))?]
        };
        for s in batch {
            if !out.contains(&s) {
                out.push(s);
            }
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct StatsRow {
    status: &'static str,
    efficacy: Option<f64>,
    makespan: Option<f64>,
    time_budget: f64,
    alpha: f64,
    efficacy_root: f64,
    efficacy_null: f64,
    nodes_expanded: u64,
    nodes_evaluated: u64,
    nodes_refined: u64,
    nodes_pruned: u64,
    nac_violations: u64,
    planner_calls: u64,
    prehoc: Option<f64>,
    posthoc: Option<f64>,
    allocation_seconds: f64,
    scheduling_seconds: f64,
    motion_seconds: f64,
}

impl StatsRow {
    fn new(r: &SearchReport) -> Self {
        let finite = |v: f64| v.is_finite().then_some(v);
        StatsRow {
            status: if r.is_feasible() { "solved" } else { "infeasible" },
            efficacy: r.solution.as_ref().map(|s| s.efficacy_total),
            makespan: r.solution.as_ref().map(|s| s.makespan),
            time_budget: r.time_budget,
            alpha: r.alpha,
            efficacy_root: r.efficacy_root,
            efficacy_null: r.efficacy_null,
            nodes_expanded: r.stats.nodes_expanded,
            nodes_evaluated: r.stats.nodes_evaluated,
            nodes_refined: r.stats.nodes_refined,
            nodes_pruned: r.stats.nodes_pruned,
            nac_violations: r.stats.nac_violations,
            planner_calls: r.stats.planner_calls,
            prehoc: r.bounds.and_then(|b| finite(b.prehoc)),
            posthoc: r.bounds.and_then(|b| finite(b.posthoc)),
            allocation_seconds: r.timings.allocation,
            scheduling_seconds: r.timings.scheduling,
            motion_seconds: r.timings.motion,
        }
    }
}

pub fn solve(
    instance: &Path,
    alpha: Option<f64>,
    budget: Option<f64>,
    model: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let mut domain = load(instance)?;
    if let Some(a) = alpha {
        check_alpha(a)?;
        domain = domain.with_alpha(a);
    }
    if let Some(c) = budget {
        if !(c > 0.0 && c.is_finite()) {
            return Err(CliError::input(format!("budget must be positive and finite, got {c}")));
        }
        domain = domain.with_time_budget(c);
    }
    if let Some(path) = model {
        let learned = EfficacyModel::load(&read(path)?, &domain.traits).map_err(|e| CliError::model(path, e))?;
        if learned.len() != domain.tasks() {
            return Err(CliError::input(format!(
                "{}: model has {} maps but the instance has {} tasks",
                path.display(),
                learned.len(),
                domain.tasks()
            )));
        }
        domain = domain.with_efficacy(learned);
    }
    let report = solve_with(&domain, &domain.travel_oracle(), SearchConfig::default()).map_err(search_error)?;
    out_dir(out)?;
    write_csv(&out.join("stats.csv"), &[StatsRow::new(&report)], &[])?;
    match report.solution_document() {
        Some(doc) => {
            let mut json = serde_json::to_string_pretty(&doc).map_err(CliError::internal)?;
            json.push('\n');
            write_file(&out.join("solution.json"), &json)
        }
        None => Err(CliError::infeasible(format!(
            "no allocation satisfies the time budget {} (root makespan {})",
            report.time_budget,
            report.worst_makespan.map_or_else(|| "unschedulable".to_string(), |m| m.to_string())
        ))),
    }
}

pub struct LearnRequest {
    pub instance: PathBuf,
    pub strategies: Vec<String>,
    pub budget: Option<usize>,
    pub seeds: Vec<u64>,
    pub oracle: bool,
    pub config: Option<PathBuf>,
    pub noise: f64,
    pub out: PathBuf,
}

/// Metrics CSV line; regret columns are empty when the oracle is off.
#[derive(Serialize)]
struct MetricsLine {
    strategy: Strategy,
    seed: u64,
    iteration: usize,
    instantaneous_regret: Option<f64>,
    cumulative_regret: Option<f64>,
    best_uncovered_reward: f64,
    step_seconds: f64,
}

const METRICS_HEADER: [&str; 7] =
    ["strategy", "seed", "iteration", "instantaneous_regret", "cumulative_regret", "best_uncovered_reward", "step_seconds"];

impl From<&MetricsRow> for MetricsLine {
    fn from(m: &MetricsRow) -> Self {
        MetricsLine {
            strategy: m.strategy,
            seed: m.seed,
            iteration: m.iteration,
            instantaneous_regret: m.instantaneous_regret,
            cumulative_regret: m.cumulative_regret,
            best_uncovered_reward: m.best_uncovered_reward,
            step_seconds: m.step_seconds,
        }
    }
}

struct Run {
    strategy: Strategy,
    seed: u64,
    metrics: Vec<MetricsRow>,
    model: EfficacyModel,
}

fn learning_runs(
    domain_traits: &steamkit::model::TeamTraitMatrix,
    truth: &EfficacyModel,
    base: &LearnerConfig,
    strategies: &[Strategy],
    seeds: &[u64],
    oracle: Option<&RegretOracle>,
    noise: f64,
) -> Result<Vec<Run>, CliError> {
    let jobs: Vec<(Strategy, u64)> = strategies.iter().flat_map(|&s| seeds.iter().map(move |&k| (s, k))).collect();
    jobs.into_par_iter()
        .map(|(strategy, seed)| {
            let config = LearnerConfig { strategy, seed, ..base.clone() };
            let mut evaluator = SyntheticEvaluator::new(truth.clone(), domain_traits.clone());
            if noise > 0.0 {
                evaluator = evaluator.with_noise(noise, seed ^ 0x5eed);
            }
            let outcome = run_learner(domain_traits, truth.len(), &mut evaluator, &config, oracle).map_err(active_error)?;
            if let Some(e) = outcome.failure {
                return Err(CliError::internal(format!("{strategy} seed {seed}: {e}")));
            }
            Ok(Run { strategy, seed, metrics: outcome.metrics, model: outcome.state.learned_model() })
        })
        .collect()
}

pub fn learn(req: &LearnRequest) -> Result<(), CliError> {
    let domain = load(&req.instance)?;
    let mut base = match &req.config {
        Some(path) => serde_json::from_str::<LearnerConfig>(&read(path)?)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?,
        None => LearnerConfig::default(),
    };
    if let Some(b) = req.budget {
        base.budget = b;
    }
    if !(req.noise >= 0.0 && req.noise.is_finite()) {
        return Err(CliError::input(format!("noise must be a non-negative number, got {}", req.noise)));
    }
    let strategies = parse_strategies(&req.strategies)?;
    let truth = domain.efficacy.clone();
    let oracle = if req.oracle {
        Some(RegretOracle::new(truth.clone(), domain.traits.clone()).map_err(active_error)?)
    } else {
        None
    };
    let runs = learning_runs(&domain.traits, &truth, &base, &strategies, &req.seeds, oracle.as_ref(), req.noise)?;

    out_dir(&req.out)?;
    let models = req.out.join("models");
    out_dir(&models)?;
    let lines: Vec<MetricsLine> = runs.iter().flat_map(|r| r.metrics.iter().map(MetricsLine::from)).collect();
    write_csv(&req.out.join("metrics.csv"), &lines, &METRICS_HEADER)?;
    for r in &runs {
        let mut json = r.model.save();
        json.push('\n');
        write_file(&models.join(format!("{}-seed{}.json", r.strategy, r.seed)), &json)?;
    }
    Ok(())
}

const DEFAULT_ALPHAS: usize = 11;

pub fn validate_bounds(instances: &[PathBuf], alphas: &[f64], timeout: f64, out: &Path) -> Result<(), CliError> {
    let alphas: Vec<f64> = if alphas.is_empty() {
        (0..DEFAULT_ALPHAS).map(|k| k as f64 / 10.0).collect()
    } else {
        alphas.to_vec()
    };
    for &a in &alphas {
        check_alpha(a)?;
    }
    if !(timeout > 0.0) {
        return Err(CliError::input(format!("oracle timeout must be positive, got {timeout}")));
    }
    let limit = Duration::try_from_secs_f64(timeout).ok();
    let domains = instances.iter().map(|p| load(p).map(|d| (p, d))).collect::<Result<Vec<_>, _>>()?;
    let per_instance = domains
        .par_iter()
        .map(|(path, domain)| bound_rows(&path.display().to_string(), domain, &alphas, limit).map_err(search_error))
        .collect::<Result<Vec<_>, _>>()?;
    let lines: Vec<BoundRow> = per_instance.into_iter().flatten().collect();
    out_dir(out)?;
    write_csv(&out.join("bounds.csv"), &lines, &[])?;
    let failed = lines.iter().filter(|l| l.holds == Some(false)).count();
    let timeouts = lines.iter().filter(|l| l.status == BoundStatus::OracleTimeout).count();
    println!("{} rows, {failed} bound violations, {timeouts} oracle timeouts", lines.len());
    Ok(())
}

pub struct BenchRequest {
    pub robots: Vec<usize>,
    pub tasks: usize,
    pub traits: usize,
    pub strategies: Vec<String>,
    pub budget: usize,
    pub seeds: Vec<u64>,
    pub oracle: bool,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct SummaryLine {
    robots: usize,
    strategy: Strategy,
    runs: usize,
    mean_final_cumulative_regret: Option<f64>,
    mean_final_best_uncovered_reward: f64,
    mean_step_seconds: f64,
}

/// Seed offset of the random team so team and ground truth draw from separate streams.
const TEAM_SEED_OFFSET: u64 = 1000;

pub fn bench(req: &BenchRequest) -> Result<(), CliError> {
    if req.tasks == 0 || req.traits == 0 || req.robots.contains(&0) {
        return Err(CliError::input("tasks, traits and robot counts must be positive"));
    }
    if req.robots.iter().any(|&n| n > steamkit::model::MAX_ROBOTS) {
        return Err(CliError::input("at most 64 robots are supported"));
    }
    let strategies = parse_strategies(&req.strategies)?;
    let base = LearnerConfig { budget: req.budget, ..LearnerConfig::default() };
    out_dir(&req.out)?;
    let mut summary = Vec::new();
    for &n in &req.robots {
        let mut runs = Vec::new();
        for &seed in &req.seeds {
            let team = random_team(n, req.traits, (0.5, 3.0), TEAM_SEED_OFFSET + seed);
            let truth = ground_truth_model(MapKind::GpSampled, seed, req.tasks, &team).map_err(active_error)?;
            let oracle = if req.oracle {
                Some(RegretOracle::new(truth.clone(), team.clone()).map_err(active_error)?)
            } else {
                None
            };
            runs.extend(learning_runs(&team, &truth, &base, &strategies, &[seed], oracle.as_ref(), 0.0)?);
        }
        runs.sort_by_key(|r| (strategies.iter().position(|&s| s == r.strategy), r.seed));
        let lines: Vec<MetricsLine> = runs.iter().flat_map(|r| r.metrics.iter().map(MetricsLine::from)).collect();
        write_csv(&req.out.join(format!("metrics-n{n}.csv")), &lines, &METRICS_HEADER)?;
        for &s in &strategies {
            let of: Vec<&Run> = runs.iter().filter(|r| r.strategy == s).collect();
            let finals: Vec<&MetricsRow> = of.iter().filter_map(|r| r.metrics.last()).collect();
            let mean = |v: &mut dyn Iterator<Item = f64>| {
                let (sum, k) = v.fold((0.0, 0usize), |(a, k), x| (a + x, k + 1));
                if k == 0 { 0.0 } else { sum / k as f64 }
            };
            let regret = req.oracle.then(|| mean(&mut finals.iter().filter_map(|m| m.cumulative_regret)));
            summary.push(SummaryLine {
                robots: n,
                strategy: s,
                runs: of.len(),
                mean_final_cumulative_regret: regret,
                mean_final_best_uncovered_reward: mean(&mut finals.iter().map(|m| m.best_uncovered_reward)),
                mean_step_seconds: mean(&mut of.iter().flat_map(|r| r.metrics.iter().map(|m| m.step_seconds))),
            });
        }
    }
    write_csv(&req.out.join("summary.csv"), &summary, &[])?;
    Ok(())
}

pub struct GenOverrides {
    pub tasks: Option<usize>,
    pub robots: Option<usize>,
    pub traits: Option<usize>,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub obstacle_density: Option<f64>,
    pub map_kind: Option<MapKind>,
    pub rho: Option<f64>,
    pub alpha: Option<f64>,
}

pub fn gen(params: Option<&Path>, o: &GenOverrides, seed: u64, out: Option<&Path>) -> Result<(), CliError> {
    let mut p: GenParams = match params {
        Some(path) => serde_json::from_str(&read(path)?).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?,
        None => GenParams::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = o.$f { p.$f = v; })* };
    }
    set!(tasks, robots, traits, width, height, obstacle_density, map_kind, rho, alpha);
    let domain = generate_instance(&p, seed).map_err(|e| match e {
        GenError::InvalidParams(_) | GenError::Exhausted(_) => CliError::input(e.to_string()),
    })?;
    let mut text = save_instance(&domain);
    text.push('\n');
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                out_dir(dir)?;
            }
            write_file(path, &text)
        }
        None => std::io::stdout().write_all(text.as_bytes()).map_err(CliError::internal),
    }
}
