//! Greedy best-first search over the incremental task-allocation graph.
//!
//! The root assigns every robot to every task; each edge removes a single
//! assignment. Nodes are ranked by TETAM, a convex combination of the
//! normalized allocation cost (NAC, lost efficacy relative to the root) and the
//! time-budget overrun (TBO, normalized makespan excess). The first popped node
//! with zero overrun under planned travel times is the solution.
//!
//! Frontier nodes are scheduled with straight-line travel estimates, which
//! never exceed planned times. A node that looks within budget is rescheduled
//! with planned paths before it is accepted; if it then overruns it returns to
//! the open set with its refined TBO.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::efficacy::EfficacyError;
use crate::model::{validate_instance, Allocation, MotionPlan, ProblemDomain, Solution, Violation};
use crate::motion::{TravelMode, TravelOracle};
use crate::scheduler::{schedule_allocation, Schedule, ScheduleError};

/// Slack allowed when checking NAC monotonicity along an edge.
const NAC_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchError {
    #[error("instance is invalid: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidInstance(Vec<Violation>),
    #[error(transparent)]
    Efficacy(#[from] EfficacyError),
}

/// f_NAC = (Π(root) − Π(A)) / (Π(root) − Π(null)).
pub fn nac_value(efficacy_root: f64, efficacy_null: f64, efficacy: f64) -> f64 {
    (efficacy_root - efficacy) / (efficacy_root - efficacy_null)
}

pub fn nac(domain: &ProblemDomain, allocation: &Allocation) -> Result<f64, SearchError> {
    let root = domain.efficacy.total(&domain.root_allocation(), &domain.traits)?;
    let null = domain.efficacy.total(&domain.null_allocation(), &domain.traits)?;
    if root <= null {
        return Err(SearchError::InvalidInstance(vec![Violation {
            code: "efficacy.degenerate".into(),
            message: format!("root efficacy {root} does not exceed null efficacy {null}"),
        }]));
    }
    Ok(nac_value(root, null, domain.efficacy.total(allocation, &domain.traits)?))
}

/// f_TBO = max((C − C_max) / |C_worst − C_max|, 0). An overrun with
/// `C_worst == C_max` has no scale and maps to `+∞`.
pub fn tbo(makespan: f64, time_budget: f64, worst_makespan: f64) -> f64 {
    let excess = makespan - time_budget;
    if excess <= 0.0 {
        return 0.0;
    }
    let scale = (worst_makespan - time_budget).abs();
    if scale == 0.0 {
        f64::INFINITY
    } else {
        excess / scale
    }
}

/// f_TETAM = (1 − α) f_NAC + α f_TBO.
pub fn tetam(f_nac: f64, f_tbo: f64, alpha: f64) -> f64 {
    let budget_term = if alpha == 0.0 { 0.0 } else { alpha * f_tbo };
    (1.0 - alpha) * f_nac + budget_term
}

/// Efficacy suboptimality bounds of an accepted solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    /// α/(1−α) · (Π(root) − Π(null)).
    pub prehoc: f64,
    /// `prehoc` scaled by the overrun of the best-efficacy open node.
    pub posthoc: f64,
    /// α ≥ 0.5: the bound is no tighter than Π(root) − Π(null).
    pub trivial: bool,
}

pub fn suboptimality_bounds(alpha: f64, efficacy_root: f64, efficacy_null: f64, best_open_tbo: f64) -> Bounds {
    let span = efficacy_root - efficacy_null;
    let prehoc = if alpha >= 1.0 { f64::INFINITY } else { alpha / (1.0 - alpha) * span };
    let posthoc = if best_open_tbo == 0.0 || alpha == 0.0 { 0.0 } else { prehoc * best_open_tbo };
    Bounds { prehoc, posthoc, trivial: alpha >= 0.5 }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    /// Nodes popped from the open set (a re-queued node counts each time).
    pub nodes_expanded: u64,
    /// Nodes scheduled with estimated travel times.
    pub nodes_evaluated: u64,
    /// Nodes rescheduled with planned travel times.
    pub nodes_refined: u64,
    /// Nodes dropped because a travel leg could not be planned.
    pub nodes_pruned: u64,
    /// Expanded edges where the child's NAC fell below its parent's.
    pub nac_violations: u64,
    pub planner_calls: u64,
}

/// Wall time per layer, in seconds. Scheduling time of children evaluated in
/// parallel is summed across threads.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub allocation: f64,
    pub scheduling: f64,
    pub motion: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchReport {
    /// `None` when the instance is infeasible.
    pub solution: Option<Solution>,
    pub alpha: f64,
    pub time_budget: f64,
    pub efficacy_root: f64,
    pub efficacy_null: f64,
    /// `None` when even the root cannot be scheduled.
    pub worst_makespan: Option<f64>,
    /// Π of the best-efficacy open node when the solution was accepted.
    pub best_open_efficacy: Option<f64>,
    pub best_open_tbo: Option<f64>,
    pub bounds: Option<Bounds>,
    pub stats: SearchStats,
    pub timings: PhaseTimings,
}

impl SearchReport {
    pub fn is_feasible(&self) -> bool {
        self.solution.is_some()
    }

    /// Everything except wall-clock timings, for determinism checks.
    pub fn without_timings(&self) -> SearchReport {
        SearchReport { timings: PhaseTimings::default(), ..self.clone() }
    }

    pub fn solution_document(&self) -> Option<SolutionDocument> {
        let s = self.solution.as_ref()?;
        Some(SolutionDocument {
            allocation: s.allocation.to_rows(),
            starts: s.schedule.starts.clone(),
            makespan: s.makespan,
            efficacy: s.efficacy_total,
            bounds: self.bounds.map(|b| BoundsDocument {
                prehoc: finite_or_none(b.prehoc),
                posthoc: finite_or_none(b.posthoc),
                trivial: b.trivial,
            }),
            stats: SolutionStats {
                alpha: self.alpha,
                time_budget: self.time_budget,
                efficacy_root: self.efficacy_root,
                efficacy_null: self.efficacy_null,
                worst_makespan: self.worst_makespan,
                best_open_efficacy: self.best_open_efficacy,
                best_open_tbo: self.best_open_tbo.and_then(finite_or_none),
                search: self.stats,
            },
            motion_plans: s.motion_plans.clone(),
        })
    }
}

fn finite_or_none(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Solution JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionDocument {
    pub allocation: Vec<Vec<u8>>,
    pub starts: Vec<f64>,
    pub makespan: f64,
    pub efficacy: f64,
    pub bounds: Option<BoundsDocument>,
    pub stats: SolutionStats,
    pub motion_plans: Vec<MotionPlan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsDocument {
    /// `null` when unbounded (α = 1).
    pub prehoc: Option<f64>,
    pub posthoc: Option<f64>,
    pub trivial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionStats {
    pub alpha: f64,
    pub time_budget: f64,
    pub efficacy_root: f64,
    pub efficacy_null: f64,
    pub worst_makespan: Option<f64>,
    pub best_open_efficacy: Option<f64>,
    pub best_open_tbo: Option<f64>,
    #[serde(flatten)]
    pub search: SearchStats,
}

#[derive(Debug, Clone, Copy)]
pub struct SearchConfig {
    /// Evaluate the children of an expanded node on the rayon pool.
    pub parallel: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { parallel: true }
    }
}

#[derive(Debug, Clone)]
struct Node {
    allocation: Allocation,
    efficacy: f64,
    nac: f64,
    tbo: f64,
    tetam: f64,
    refined: bool,
}

#[derive(Debug, Clone, Copy)]
struct OpenEntry {
    tetam: f64,
    assigned: u32,
    seq: u64,
    node: usize,
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OpenEntry {}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OpenEntry {
    // Reversed: BinaryHeap pops the maximum, we want the minimum key.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .tetam
            .total_cmp(&self.tetam)
            .then(other.assigned.cmp(&self.assigned))
            .then(other.seq.cmp(&self.seq))
    }
}

struct Evaluation {
    makespan: f64,
    seconds: f64,
}

struct Search<'a> {
    domain: &'a ProblemDomain,
    oracle: &'a TravelOracle,
    config: SearchConfig,
    efficacy_root: f64,
    efficacy_null: f64,
    worst: f64,
    nodes: Vec<Node>,
    open: BinaryHeap<OpenEntry>,
    seq: u64,
    stats: SearchStats,
    schedule_seconds: f64,
}

impl Search<'_> {
    fn schedule(&self, allocation: &Allocation, mode: TravelMode) -> Result<(Schedule, Evaluation), ScheduleError> {
        let started = Instant::now();
        let (_, schedule) = schedule_allocation(self.domain, allocation, self.oracle, mode)?;
        let eval = Evaluation { makespan: schedule.makespan, seconds: started.elapsed().as_secs_f64() };
        Ok((schedule, eval))
    }

    fn efficacy(&self, allocation: &Allocation) -> f64 {
        self.domain
            .efficacy
            .total(allocation, &self.domain.traits)
            .expect("validated instance evaluates every allocation")
    }

    fn make_node(&self, allocation: Allocation, makespan: f64, refined: bool) -> Node {
        let efficacy = self.efficacy(&allocation);
        let nac = nac_value(self.efficacy_root, self.efficacy_null, efficacy);
        let tbo = tbo(makespan, self.domain.time_budget, self.worst);
        Node { allocation, efficacy, nac, tbo, tetam: tetam(nac, tbo, self.domain.alpha), refined }
    }

    fn push(&mut self, node: usize) {
        let n = &self.nodes[node];
        self.open.push(OpenEntry { tetam: n.tetam, assigned: n.allocation.assigned(), seq: self.seq, node });
        self.seq += 1;
    }

    fn expand(&mut self, parent: usize, visited: &mut HashSet<Allocation>) {
        let parent_alloc = self.nodes[parent].allocation.clone();
        let mut children = Vec::new();
        for m in 0..parent_alloc.tasks() {
            for r in parent_alloc.members(m) {
                let child = parent_alloc.without(m, r);
                if visited.insert(child.clone()) {
                    children.push(child);
                }
            }
        }
        let run = |a: &Allocation| self.schedule(a, TravelMode::Estimate).map(|(_, e)| e);
        let evaluations: Vec<_> = if self.config.parallel && children.len() >= 8 {
            children.par_iter().map(run).collect()
        } else {
            children.iter().map(run).collect()
        };
        let parent_nac = self.nodes[parent].nac;
        for (child, evaluation) in children.into_iter().zip(evaluations) {
            self.stats.nodes_evaluated += 1;
            let evaluation = match evaluation {
                Ok(e) => e,
                Err(_) => {
                    self.stats.nodes_pruned += 1;
                    continue;
                }
            };
            self.schedule_seconds += evaluation.seconds;
            let node = self.make_node(child, evaluation.makespan, false);
            if node.nac < parent_nac - NAC_TOLERANCE {
                self.stats.nac_violations += 1;
            }
            self.nodes.push(node);
            self.push(self.nodes.len() - 1);
        }
    }

    /// Best-efficacy node among the open set and the accepted node; ties go
    /// to the smaller queued overrun.
    fn best_open(&self, accepted: usize) -> (f64, f64) {
        let mut best = (self.nodes[accepted].efficacy, self.nodes[accepted].tbo);
        for entry in &self.open {
            let n = &self.nodes[entry.node];
            if n.efficacy > best.0 || (n.efficacy == best.0 && n.tbo < best.1) {
                best = (n.efficacy, n.tbo);
            }
        }
        best
    }

    fn motion_plans(&self, allocation: &Allocation, schedule: &Schedule) -> Vec<MotionPlan> {
        let tasks = &self.domain.network.tasks;
        let mut plans = Vec::new();
        for robot in 0..allocation.robots() {
            let mut duties: Vec<usize> = (0..allocation.tasks()).filter(|&m| allocation.contains(m, robot)).collect();
            duties.sort_by(|&a, &b| schedule.starts[a].total_cmp(&schedule.starts[b]).then(a.cmp(&b)));
            let mut at = self.domain.robot_starts[robot];
            let mut from_task = None;
            for (leg, &task) in duties.iter().enumerate() {
                let to = tasks[task].site;
                let path = self
                    .oracle
                    .cached_path(at, to)
                    .or_else(|| self.oracle.path(at, to).ok())
                    .map(|p| p.as_ref().clone())
                    .unwrap_or_default();
                plans.push(MotionPlan { robot, leg, from_task, to_task: task, path });
                at = to;
                from_task = Some(task);
            }
        }
        plans
    }
}

/// Runs the search with the domain's own α and time budget.
pub fn solve(domain: &ProblemDomain) -> Result<SearchReport, SearchError> {
    let oracle = domain.travel_oracle();
    solve_with(domain, &oracle, SearchConfig::default())
}

pub fn solve_with(domain: &ProblemDomain, oracle: &TravelOracle, config: SearchConfig) -> Result<SearchReport, SearchError> {
    let violations = validate_instance(domain);
    if !violations.is_empty() {
        return Err(SearchError::InvalidInstance(violations));
    }
    let started = Instant::now();
    let motion_before = oracle.planning_seconds();
    let planner_before = oracle.planner_calls();

    let root = domain.root_allocation();
    let efficacy_root = domain.efficacy.total(&root, &domain.traits)?;
    let efficacy_null = domain.efficacy.total(&domain.null_allocation(), &domain.traits)?;

    let mut search = Search {
        domain,
        oracle,
        config,
        efficacy_root,
        efficacy_null,
        worst: 0.0,
        nodes: Vec::new(),
        open: BinaryHeap::new(),
        seq: 0,
        stats: SearchStats::default(),
        schedule_seconds: 0.0,
    };

    let mut report = SearchReport {
        solution: None,
        alpha: domain.alpha,
        time_budget: domain.time_budget,
        efficacy_root,
        efficacy_null,
        worst_makespan: None,
        best_open_efficacy: None,
        best_open_tbo: None,
        bounds: None,
        stats: SearchStats::default(),
        timings: PhaseTimings::default(),
    };

    let finish = |search: &Search, mut report: SearchReport| {
        let total = started.elapsed().as_secs_f64();
        let motion = oracle.planning_seconds() - motion_before;
        report.stats = search.stats;
        report.stats.planner_calls = oracle.planner_calls() - planner_before;
        report.timings = PhaseTimings {
            allocation: (total - search.schedule_seconds).max(0.0),
            scheduling: (search.schedule_seconds - motion).max(0.0),
            motion,
        };
        report
    };

    // Root with planned travel: C_worst must dominate every estimated makespan.
    let root_eval = match search.schedule(&root, TravelMode::Planned) {
        Ok((_, e)) => e,
        Err(_) => return Ok(finish(&search, report)),
    };
    search.schedule_seconds += root_eval.seconds;
    search.stats.nodes_evaluated += 1;
    search.stats.nodes_refined += 1;
    search.worst = root_eval.makespan;
    report.worst_makespan = Some(root_eval.makespan);
    let root_node = search.make_node(root.clone(), root_eval.makespan, true);
    search.nodes.push(root_node);
    search.push(0);

    let mut visited: HashSet<Allocation> = HashSet::from([root]);

    while let Some(entry) = search.open.pop() {
        search.stats.nodes_expanded += 1;
        let idx = entry.node;
        if search.nodes[idx].tbo == 0.0 {
            let allocation = search.nodes[idx].allocation.clone();
            let refined = search.schedule(&allocation, TravelMode::Planned);
            search.stats.nodes_refined += u64::from(!search.nodes[idx].refined);
            let (schedule, evaluation) = match refined {
                Ok(r) => r,
                Err(_) => {
                    search.stats.nodes_pruned += 1;
                    continue;
                }
            };
            search.schedule_seconds += evaluation.seconds;
            if !search.nodes[idx].refined {
                let node = search.make_node(allocation.clone(), evaluation.makespan, true);
                search.nodes[idx] = node;
                if search.nodes[idx].tbo > 0.0 {
                    search.push(idx);
                    continue;
                }
            }

            let (best_efficacy, best_tbo) = search.best_open(idx);
            report.best_open_efficacy = Some(best_efficacy);
            report.best_open_tbo = Some(best_tbo);
            report.bounds = Some(suboptimality_bounds(domain.alpha, efficacy_root, efficacy_null, best_tbo));
            let motion_plans = search.motion_plans(&allocation, &schedule);
            report.solution = Some(Solution {
                efficacy_total: search.nodes[idx].efficacy,
                makespan: schedule.makespan,
                allocation,
                schedule,
                motion_plans,
            });
            return Ok(finish(&search, report));
        }
        search.expand(idx, &mut visited);
    }
    Ok(finish(&search, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::efficacy::{EfficacyModel, LinearSaturating, TraitEfficacyMap};
    use crate::model::{TaskNetwork, TaskSpec, TeamTraitMatrix};
    use crate::motion::{Cell, WorldGrid};

    fn domain(budget: f64, alpha: f64) -> ProblemDomain {
        let map = TraitEfficacyMap::LinearSaturating(LinearSaturating::new(vec![0.1], 1.0).unwrap());
        ProblemDomain {
            network: TaskNetwork {
                tasks: vec![TaskSpec::at(Cell(2, 0), 3.0), TaskSpec::at(Cell(2, 2), 3.0)],
                precedence: vec![],
                mutex: vec![],
            },
            traits: TeamTraitMatrix::new(vec![vec![5.0], vec![5.0]]).unwrap(),
            efficacy: EfficacyModel::new(vec![map.clone(), map]).unwrap(),
            world: WorldGrid::open(4, 4),
            robot_starts: vec![Cell(0, 0), Cell(0, 2)],
            speeds: None,
            time_budget: budget,
            alpha,
        }
    }

    #[test]
    fn nac_examples() {
        let map = TraitEfficacyMap::LinearSaturating(LinearSaturating::new(vec![0.1], 1.0).unwrap());
        let mut d = domain(100.0, 0.0);
        d.network.tasks.truncate(1);
        d.efficacy = EfficacyModel::new(vec![map]).unwrap();
        assert_eq!(nac(&d, &d.root_allocation()).unwrap(), 0.0);
        assert_eq!(nac(&d, &d.null_allocation()).unwrap(), 1.0);
        let one = Allocation::from_rows(&[vec![1, 0]]).unwrap();
        assert!((nac(&d, &one).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tbo_examples() {
        assert_eq!(tbo(8.0, 10.0, 30.0), 0.0);
        assert!((tbo(12.0, 10.0, 20.0) - 0.2).abs() < 1e-15);
        assert_eq!(tbo(20.0, 10.0, 20.0), 1.0);
        assert_eq!(tbo(11.0, 10.0, 10.0), f64::INFINITY);
    }

    #[test]
    fn tetam_examples() {
        assert_eq!(tetam(0.4, 0.9, 0.0), 0.4);
        assert_eq!(tetam(0.4, 0.9, 1.0), 0.9);
        assert!((tetam(0.5, 0.2, 0.5) - 0.35).abs() < 1e-15);
        assert_eq!(tetam(0.4, f64::INFINITY, 0.0), 0.4);
    }

    #[test]
    fn bound_examples() {
        assert_eq!(suboptimality_bounds(0.0, 3.0, 0.0, 0.7).prehoc, 0.0);
        let b = suboptimality_bounds(0.25, 3.0, 0.0, 0.4);
        assert!((b.prehoc - 1.0).abs() < 1e-15);
        assert!((b.posthoc - 0.4).abs() < 1e-15);
        assert!(!b.trivial);
        assert!(suboptimality_bounds(0.5, 3.0, 0.0, 0.4).trivial);
    }

    #[test]
    fn generous_budget_accepts_root() {
        let d = domain(1000.0, 0.5);
        let report = solve(&d).unwrap();
        let s = report.solution.as_ref().unwrap();
        assert_eq!(s.allocation, d.root_allocation());
        assert_eq!(s.efficacy_total, report.efficacy_root);
        assert_eq!(report.stats.nodes_expanded, 1);
        assert_eq!(report.bounds.unwrap().posthoc, 0.0);
    }

    #[test]
    fn tight_budget_drops_robots() {
        // root: both robots on both tasks, sequential; budget only allows parallel execution
        let d = domain(6.0, 0.3);
        let report = solve(&d).unwrap();
        let s = report.solution.as_ref().expect("parallel split fits");
        assert!(s.makespan <= 6.0);
        assert!(report.worst_makespan.unwrap() > 6.0);
        assert_eq!(report.stats.nac_violations, 0);
        // every travel leg in the solution has a plan consistent with the schedule
        for plan in &s.motion_plans {
            assert!(s.schedule.starts[plan.to_task] + 1e-9 >= (plan.path.len() - 1) as f64);
        }
    }

    #[test]
    fn impossible_budget_is_infeasible() {
        let d = domain(2.0, 0.3);
        let report = solve(&d).unwrap();
        assert!(report.solution.is_none());
        assert!(report.bounds.is_none());
    }

    #[test]
    fn invalid_instance_is_rejected() {
        let d = domain(0.0, 0.3);
        assert!(matches!(solve(&d), Err(SearchError::InvalidInstance(_))));
    }

    #[test]
    fn runs_are_deterministic() {
        let d = domain(7.0, 0.4);
        let a = solve(&d).unwrap().without_timings();
        let b = solve(&d).unwrap().without_timings();
        assert_eq!(a, b);
    }
}
