//! Instance generation, an exhaustive optimal-allocation oracle and the
//! experiment drivers built on them.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::active::{learn, ActiveError, LearnerConfig, RegretOracle, Strategy, SyntheticEvaluator};
use crate::efficacy::{sample_ground_truth, EfficacyModel, GroundTruthOptions, LinearSaturating, MapKind, TraitEfficacyMap};
use crate::model::{validate_instance, Allocation, ProblemDomain, TaskNetwork, TaskSpec, TeamTraitMatrix};
use crate::motion::{Cell, TravelMode, TravelOracle, WorldGrid};
use crate::scheduler::{schedule_allocation, worst_makespan};
use crate::search::{solve_with, SearchConfig, SearchError, SearchReport};

/// Attempts before generation gives up.
pub const GENERATION_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenError {
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("no valid instance after {0} attempts")]
    Exhausted(usize),
}

/// Parameters of the random instance generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    pub tasks: usize,
    pub robots: usize,
    pub traits: usize,
    pub width: u32,
    pub height: u32,
    /// Probability that a cell is an obstacle.
    pub obstacle_density: f64,
    pub map_kind: MapKind,
    /// `C_max = rho · worst makespan`.
    pub rho: f64,
    pub alpha: f64,
    /// Probability of a precedence edge `i → j` for each `i < j`.
    pub precedence_prob: f64,
    /// Probability of a mutex between two tasks not ordered by precedence.
    pub mutex_prob: f64,
    pub duration_range: (f64, f64),
    pub trait_range: (f64, f64),
    /// Linear maps saturate at this fraction of the whole team's weighted traits.
    pub saturation: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            tasks: 3,
            robots: 4,
            traits: 2,
            width: 10,
            height: 10,
            obstacle_density: 0.1,
            map_kind: MapKind::LinearSaturating,
            rho: 0.6,
            alpha: 0.3,
            precedence_prob: 0.2,
            mutex_prob: 0.2,
            duration_range: (1.0, 5.0),
            trait_range: (0.5, 3.0),
            saturation: 0.6,
        }
    }
}

impl GenParams {
    fn check(&self) -> Result<(), GenError> {
        let fail = |m: &str| Err(GenError::InvalidParams(m.into()));
        if self.tasks == 0 || self.robots == 0 || self.traits == 0 {
            return fail("tasks, robots and traits must be positive");
        }
        if self.robots > 64 {
            return fail("at most 64 robots are supported");
        }
        if self.width == 0 || self.height == 0 {
            return fail("grid must be non-empty");
        }
        if !(0.0..1.0).contains(&self.obstacle_density) {
            return fail("obstacle_density must lie in [0, 1)");
        }
        if !(self.rho > 0.0) {
            return fail("rho must be positive");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail("alpha must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.precedence_prob) || !(0.0..=1.0).contains(&self.mutex_prob) {
            return fail("probabilities must lie in [0, 1]");
        }
        let (d0, d1) = self.duration_range;
        let (t0, t1) = self.trait_range;
        if !(d0 > 0.0 && d1 >= d0) || !(t0 >= 0.0 && t1 >= t0 && t1 > 0.0) {
            return fail("ranges must be ordered, durations positive and traits non-negative");
        }
        if !(self.saturation > 0.0) {
            return fail("saturation must be positive");
        }
        if self.map_kind == MapKind::GpLearned {
            return fail("gp-learned maps cannot be generated");
        }
        Ok(())
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Random valid instance, deterministic in `(params, seed)`.
pub fn generate_instance(params: &GenParams, seed: u64) -> Result<ProblemDomain, GenError> {
    params.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..GENERATION_RETRIES {
        if let Some(domain) = attempt(params, &mut rng) {
            return Ok(domain);
        }
    }
    Err(GenError::Exhausted(GENERATION_RETRIES))
}

fn attempt(p: &GenParams, rng: &mut ChaCha8Rng) -> Option<ProblemDomain> {
    let mut obstacles = Vec::new();
    for y in 0..p.height as i32 {
        for x in 0..p.width as i32 {
            if rng.gen::<f64>() < p.obstacle_density {
                obstacles.push(Cell(x, y));
            }
        }
    }
    let world = WorldGrid::new(p.width, p.height, obstacles);
    let free: Vec<Cell> = (0..p.height as i32)
        .flat_map(|y| (0..p.width as i32).map(move |x| Cell(x, y)))
        .filter(|&c| world.is_free(c))
        .collect();
    let anchor = *free.choose(rng)?;
    let component: Vec<Cell> = world.reachable_from(anchor).into_iter().collect();
    if component.len() < p.tasks + p.robots {
        return None;
    }
    let mut cells: Vec<Cell> = component.choose_multiple(rng, p.tasks + p.robots).copied().collect();
    let robot_starts = cells.split_off(p.tasks);

    let (d0, d1) = p.duration_range;
    let tasks: Vec<TaskSpec> = cells
        .iter()
        .map(|&site| TaskSpec::at(site, (rng.gen_range(d0..=d1) * 10.0).round() / 10.0))
        .collect();
    let mut precedence = Vec::new();
    let mut mutex = Vec::new();
    for i in 0..p.tasks {
        for j in i + 1..p.tasks {
            if rng.gen::<f64>() < p.precedence_prob {
                precedence.push((i, j));
            } else if rng.gen::<f64>() < p.mutex_prob {
                mutex.push((i, j));
            }
        }
    }

    let (t0, t1) = p.trait_range;
    let rows = (0..p.robots).map(|_| (0..p.traits).map(|_| round2(rng.gen_range(t0..=t1))).collect()).collect();
    let traits = TeamTraitMatrix::new(rows).ok()?;
    let totals = traits.totals();
    let maps = (0..p.tasks)
        .map(|_| match p.map_kind {
            MapKind::LinearSaturating => {
                let w: Vec<f64> = (0..p.traits).map(|_| round2(rng.gen_range(0.1..=1.0))).collect();
                let c: f64 = w.iter().zip(&totals).map(|(a, b)| a * b).sum::<f64>() * p.saturation;
                LinearSaturating::new(w, c).ok().map(TraitEfficacyMap::LinearSaturating)
            }
            kind => sample_ground_truth(rng.gen(), kind, &totals, GroundTruthOptions::default()).ok(),
        })
        .collect::<Option<Vec<_>>>()?;
    let efficacy = EfficacyModel::new(maps).ok()?;

    let mut domain = ProblemDomain {
        network: TaskNetwork { tasks, precedence, mutex },
        traits,
        efficacy,
        world,
        robot_starts,
        speeds: None,
        time_budget: 1.0,
        alpha: p.alpha,
    };
    let worst = worst_makespan(&domain, &domain.travel_oracle(), TravelMode::Planned).ok()?;
    domain.time_budget = p.rho * worst;
    validate_instance(&domain).is_empty().then_some(domain)
}

/// Feasible allocation of maximum efficacy.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalAllocation {
    pub allocation: Allocation,
    pub efficacy: f64,
    pub makespan: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("optimal-allocation oracle exceeded its time limit")]
pub struct OracleTimeout;

struct Exhaustive<'a> {
    domain: &'a ProblemDomain,
    oracle: &'a TravelOracle,
    /// Per task: coalitions with their scores, best first.
    options: Vec<Vec<(u64, f64)>>,
    /// Best achievable score of tasks `m..`.
    tail: Vec<f64>,
    best: Option<(Allocation, f64, f64)>,
    deadline: Option<Instant>,
}

impl Exhaustive<'_> {
    fn visit(&mut self, partial: &mut Allocation, task: usize, score: f64) -> Result<(), OracleTimeout> {
        if self.deadline.is_some_and(|d| Instant::now() > d) {
            return Err(OracleTimeout);
        }
        if task == partial.tasks() {
            let efficacy = self.domain.efficacy.total(partial, &self.domain.traits).expect("validated instance");
            if self.best.as_ref().map_or(true, |b| efficacy > b.1) {
                let (_, s) = schedule_allocation(self.domain, partial, self.oracle, TravelMode::Planned)
                    .expect("checked when the last coalition was placed");
                self.best = Some((partial.clone(), efficacy, s.makespan));
            }
            return Ok(());
        }
        for k in 0..self.options[task].len() {
            let (mask, value) = self.options[task][k];
            if let Some(b) = &self.best {
                // Slack keeps rounding in the partial sums from cutting a tie.
                if score + value + self.tail[task + 1] < b.1 - 1e-12 {
                    break;
                }
            }
            partial.set_coalition(task, mask);
            // Tasks after `task` are still empty; adding robots never shortens the schedule.
            let fits = schedule_allocation(self.domain, partial, self.oracle, TravelMode::Planned)
                .is_ok_and(|(_, s)| s.makespan <= self.domain.time_budget);
            if fits {
                self.visit(partial, task + 1, score + value)?;
            }
            partial.set_coalition(task, 0);
        }
        Ok(())
    }
}

/// Maximum-efficacy allocation whose planned-travel makespan fits the
/// budget, by depth-first branch and bound over per-task coalitions. `None`
/// when no allocation fits.
pub fn optimal_allocation(
    domain: &ProblemDomain,
    oracle: &TravelOracle,
    limit: Option<Duration>,
) -> Result<Option<OptimalAllocation>, OracleTimeout> {
    let n = domain.robots();
    let m = domain.tasks();
    let options: Vec<Vec<(u64, f64)>> = (0..m)
        .map(|task| {
            let map = domain.efficacy.map(task);
            let mut opts: Vec<(u64, f64)> = (0..1u64 << n)
                .map(|mask| (mask, map.evaluate(&domain.traits.coalition_traits(mask)).expect("validated instance")))
                .collect();
            opts.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.count_ones().cmp(&b.0.count_ones())).then(a.0.cmp(&b.0)));
            opts
        })
        .collect();
    let mut tail = vec![0.0; m + 1];
    for task in (0..m).rev() {
        tail[task] = tail[task + 1] + options[task][0].1;
    }
    let mut search = Exhaustive {
        domain,
        oracle,
        options,
        tail,
        best: None,
        deadline: limit.map(|l| Instant::now() + l),
    };
    let mut partial = Allocation::null(m, n);
    search.visit(&mut partial, 0, 0.0)?;
    Ok(search.best.map(|(allocation, efficacy, makespan)| OptimalAllocation { allocation, efficacy, makespan }))
}

/// One `(instance, α)` row of the bound validation sweep. Gap and bounds are
/// divided by `Π(root) − Π(null)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub instance: String,
    pub alpha: f64,
    pub status: BoundStatus,
    pub gap: Option<f64>,
    pub prehoc: Option<f64>,
    pub posthoc: Option<f64>,
    pub trivial: bool,
    /// gap ≤ prehoc (only checked for α < 0.5) and gap ≤ posthoc.
    pub holds: Option<bool>,
    pub nac_violations: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundStatus {
    Solved,
    Infeasible,
    OracleTimeout,
}

/// Slack on the bound comparisons.
pub const BOUND_TOLERANCE: f64 = 1e-9;

/// Solves `domain` at every α in `alphas` and compares against the optimum.
pub fn bound_rows(
    name: &str,
    domain: &ProblemDomain,
    alphas: &[f64],
    oracle_limit: Option<Duration>,
) -> Result<Vec<BoundRow>, SearchError> {
    let oracle = domain.travel_oracle();
    let optimum = optimal_allocation(domain, &oracle, oracle_limit);
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let report = solve_with(&domain.with_alpha(alpha), &oracle, SearchConfig::default())?;
        rows.push(bound_row(name, alpha, &report, &optimum));
    }
    Ok(rows)
}

fn bound_row(
    name: &str,
    alpha: f64,
    report: &SearchReport,
    optimum: &Result<Option<OptimalAllocation>, OracleTimeout>,
) -> BoundRow {
    let span = report.efficacy_root - report.efficacy_null;
    let mut row = BoundRow {
        instance: name.to_string(),
        alpha,
        status: BoundStatus::Infeasible,
        gap: None,
        prehoc: None,
        posthoc: None,
        trivial: alpha >= 0.5,
        holds: None,
        nac_violations: report.stats.nac_violations,
    };
    let (Some(solution), Some(bounds)) = (&report.solution, report.bounds) else {
        return row;
    };
    row.prehoc = Some(bounds.prehoc / span);
    row.posthoc = Some(bounds.posthoc / span);
    let best = match optimum {
        Err(OracleTimeout) => {
            row.status = BoundStatus::OracleTimeout;
            return row;
        }
        Ok(best) => best.as_ref().map_or(solution.efficacy_total, |b| b.efficacy),
    };
    row.status = BoundStatus::Solved;
    let gap = (best - solution.efficacy_total) / span;
    row.gap = Some(gap);
    let pre_ok = alpha >= 0.5 || gap <= bounds.prehoc / span + BOUND_TOLERANCE;
    let post_ok = gap <= bounds.posthoc / span + BOUND_TOLERANCE;
    row.holds = Some(pre_ok && post_ok);
    row
}

/// Per-task ground-truth maps for a team, seeded per task.
pub fn ground_truth_model(kind: MapKind, seed: u64, tasks: usize, traits: &TeamTraitMatrix) -> Result<EfficacyModel, ActiveError> {
    let totals = traits.totals();
    let maps = (0..tasks)
        .map(|m| sample_ground_truth(seed.wrapping_mul(1_000_003).wrapping_add(m as u64), kind, &totals, GroundTruthOptions::default()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EfficacyModel::new(maps)?)
}

/// Team with traits uniform in `range`, two decimals.
pub fn random_team(robots: usize, traits: usize, range: (f64, f64), seed: u64) -> TeamTraitMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..robots).map(|_| (0..traits).map(|_| round2(rng.gen_range(range.0..=range.1))).collect()).collect();
    TeamTraitMatrix::new(rows).expect("rectangular and non-negative")
}

/// Learns one map per task of `domain` by querying `ground_truth`.
pub fn learn_maps(
    domain: &ProblemDomain,
    ground_truth: &EfficacyModel,
    config: &LearnerConfig,
) -> Result<EfficacyModel, ActiveError> {
    let mut evaluator = SyntheticEvaluator::new(ground_truth.clone(), domain.traits.clone());
    let outcome = learn(&domain.traits, domain.tasks(), &mut evaluator, config, None)?;
    Ok(outcome.state.learned_model())
}

/// Solves `domain` (typically carrying learned maps) and scores the
/// allocation with `ground_truth`. `None` when the search rejects the maps as
/// degenerate or finds no feasible allocation.
pub fn ground_truth_efficacy(domain: &ProblemDomain, ground_truth: &EfficacyModel) -> Result<Option<f64>, ActiveError> {
    let Ok(report) = crate::search::solve(domain) else {
        return Ok(None);
    };
    match report.solution {
        Some(s) => Ok(Some(ground_truth.total(&s.allocation, &domain.traits)?)),
        None => Ok(None),
    }
}

/// Cumulative regret after each iteration of one learning run.
pub fn cumulative_regret_curve(
    traits: &TeamTraitMatrix,
    ground_truth: &EfficacyModel,
    strategy: Strategy,
    budget: usize,
    seed: u64,
) -> Result<Vec<f64>, ActiveError> {
    let oracle = RegretOracle::new(ground_truth.clone(), traits.clone())?;
    let mut evaluator = SyntheticEvaluator::new(ground_truth.clone(), traits.clone());
    let config = LearnerConfig { strategy, budget, seed, ..LearnerConfig::default() };
    let outcome = learn(traits, ground_truth.len(), &mut evaluator, &config, Some(&oracle))?;
    Ok(outcome.metrics.iter().map(|m| m.cumulative_regret.unwrap_or(0.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{load_instance, save_instance};

    fn small() -> GenParams {
        GenParams { tasks: 3, robots: 3, width: 6, height: 6, ..GenParams::default() }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let a = save_instance(&generate_instance(&small(), 9).unwrap());
        let b = save_instance(&generate_instance(&small(), 9).unwrap());
        assert_eq!(a, b);
        assert_ne!(a, save_instance(&generate_instance(&small(), 10).unwrap()));
        assert_eq!(save_instance(&load_instance(&a).unwrap()), a);
    }

    #[test]
    fn generated_instances_validate() {
        for seed in 0..100 {
            let d = generate_instance(&small(), seed).unwrap();
            assert!(validate_instance(&d).is_empty(), "seed {seed}");
        }
    }

    #[test]
    fn generous_rho_makes_root_feasible() {
        let p = GenParams { rho: 1.0, ..small() };
        let d = generate_instance(&p, 4).unwrap();
        let report = crate::search::solve(&d).unwrap();
        assert_eq!(report.solution.unwrap().allocation, d.root_allocation());
    }

    #[test]
    fn impossible_grids_are_reported() {
        let p = GenParams { width: 1, height: 1, ..small() };
        assert_eq!(generate_instance(&p, 0).unwrap_err(), GenError::Exhausted(GENERATION_RETRIES));
    }

    #[test]
    fn oracle_matches_plain_enumeration() {
        let p = GenParams { tasks: 2, robots: 3, ..small() };
        for seed in 0..5 {
            let d = generate_instance(&p, seed).unwrap();
            let oracle = d.travel_oracle();
            let mut best = f64::NEG_INFINITY;
            for a in 0..8u64 {
                for b in 0..8u64 {
                    let alloc = Allocation::from_masks(3, vec![a, b]).unwrap();
                    let (_, s) = schedule_allocation(&d, &alloc, &oracle, TravelMode::Planned).unwrap();
                    if s.makespan <= d.time_budget {
                        best = best.max(d.efficacy.total(&alloc, &d.traits).unwrap());
                    }
                }
            }
            let found = optimal_allocation(&d, &oracle, None).unwrap().unwrap();
            assert_eq!(found.efficacy, best);
            assert!(found.makespan <= d.time_budget);
        }
    }

    #[test]
    fn alpha_zero_rows_have_zero_gap() {
        let d = generate_instance(&small(), 2).unwrap();
        let rows = bound_rows("i", &d, &[0.0, 0.25], None).unwrap();
        assert_eq!(rows[0].gap, Some(0.0));
        assert!(rows.iter().all(|r| r.holds == Some(true)));
    }
}
