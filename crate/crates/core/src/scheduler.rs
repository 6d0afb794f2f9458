//! Minimum-makespan scheduling of an allocation under precedence, mutex and
//! travel-time constraints.
//!
//! With every mutex pair oriented, the constraints form a difference system
//! whose earliest solution is the longest path from a virtual source (edge
//! `source → i` of weight `x_i`, edge `i → j` of weight `d_i + x_ij`). The
//! solver branches on the orientation of each remaining mutex pair and
//! bounds with the longest path of the partially oriented graph, which is a
//! componentwise lower bound on the start times of every completion.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Allocation, ProblemDomain};
use crate::motion::{MotionError, TravelMode, TravelOracle};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("travel leg cannot be planned: {0}")]
    Unreachable(#[from] MotionError),
    #[error("no ordering of the mutex pairs admits a schedule")]
    Infeasible,
}

/// Every orientation of the mutex pairs induces a positive cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no ordering of the mutex pairs admits a schedule")]
pub struct Infeasible;

impl From<Infeasible> for ScheduleError {
    fn from(_: Infeasible) -> Self {
        ScheduleError::Infeasible
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulingInstance {
    pub durations: Vec<f64>,
    /// `x_i`: time for the coalition of task `i` to reach its site.
    pub initial_travel: Vec<f64>,
    /// `transition[i][j]` = `x_ij`.
    pub transition: Vec<Vec<f64>>,
    /// Ordered pairs `(i, j)` enforcing `s_j >= s_i + d_i + x_ij`.
    pub precedence: Vec<(usize, usize)>,
    /// Reduced mutex set, pairs `(i, j)` with `i < j`.
    pub mutex: Vec<(usize, usize)>,
}

impl SchedulingInstance {
    pub fn tasks(&self) -> usize {
        self.durations.len()
    }

    fn edge_weight(&self, from: usize, to: usize) -> f64 {
        self.durations[from] + self.transition[from][to]
    }
}

/// Which task of a mutex pair runs first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutexOrder {
    pub first: usize,
    pub second: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub starts: Vec<f64>,
    /// One entry per reduced mutex pair, in instance order.
    pub orderings: Vec<MutexOrder>,
    pub makespan: f64,
}

fn makespan_of(starts: &[f64], durations: &[f64]) -> f64 {
    starts.iter().zip(durations).map(|(s, d)| s + d).fold(0.0, f64::max)
}

/// Earliest start times satisfying `s_i >= source[i]` and every edge, or
/// `None` if the edges contain a positive cycle.
fn longest_path(source: &[f64], edges: &[(usize, usize, f64)]) -> Option<Vec<f64>> {
    let n = source.len();
    let mut dist = source.to_vec();
    for pass in 0..=n {
        let mut changed = false;
        for &(i, j, w) in edges {
            let candidate = dist[i] + w;
            if candidate > dist[j] {
                dist[j] = candidate;
                changed = true;
            }
        }
        if !changed {
            return Some(dist);
        }
        if pass == n {
            break;
        }
    }
    None
}

/// `a >= b` lexicographically.
fn lex_ge(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x != y {
            return x > y;
        }
    }
    true
}

struct BranchAndBound<'a> {
    inst: &'a SchedulingInstance,
    pairs: Vec<(usize, usize)>,
    edges: Vec<(usize, usize, f64)>,
    first_is_low: Vec<bool>,
    best: Option<(f64, Vec<f64>, Vec<bool>)>,
}

impl BranchAndBound<'_> {
    fn dominated(&self, makespan: f64, starts: &[f64]) -> bool {
        match &self.best {
            None => false,
            Some((best_c, best_s, _)) => makespan > *best_c || (makespan == *best_c && lex_ge(starts, best_s)),
        }
    }

    fn search(&mut self, depth: usize) {
        let Some(starts) = longest_path(&self.inst.initial_travel, &self.edges) else {
            return;
        };
        let makespan = makespan_of(&starts, &self.inst.durations);
        if self.dominated(makespan, &starts) {
            return;
        }
        if depth == self.pairs.len() {
            self.best = Some((makespan, starts, self.first_is_low.clone()));
            return;
        }
        let (i, j) = self.pairs[depth];
        let low_first = starts[i] <= starts[j];
        for choice in [low_first, !low_first] {
            let (a, b) = if choice { (i, j) } else { (j, i) };
            self.edges.push((a, b, self.inst.edge_weight(a, b)));
            self.first_is_low[depth] = choice;
            self.search(depth + 1);
            self.edges.pop();
        }
    }
}

/// Globally minimum-makespan schedule. Ties between equal makespans go to the
/// lexicographically smallest start-time vector.
pub fn solve_schedule(inst: &SchedulingInstance) -> Result<Schedule, Infeasible> {
    let mut pairs: Vec<(usize, usize)> = inst.mutex.iter().map(|&(i, j)| (i.min(j), i.max(j))).collect();
    pairs.sort_by(|a, b| {
        let wa = inst.durations[a.0] + inst.durations[a.1];
        let wb = inst.durations[b.0] + inst.durations[b.1];
        wb.total_cmp(&wa).then(a.cmp(b))
    });
    let edges = inst.precedence.iter().map(|&(i, j)| (i, j, inst.edge_weight(i, j))).collect();
    let mut bnb = BranchAndBound {
        inst,
        first_is_low: vec![true; pairs.len()],
        pairs,
        edges,
        best: None,
    };
    bnb.search(0);
    let (makespan, starts, choices) = bnb.best.ok_or(Infeasible)?;

    let orderings = inst
        .mutex
        .iter()
        .map(|&(i, j)| {
            let key = (i.min(j), i.max(j));
            let k = bnb.pairs.iter().position(|&p| p == key).expect("pair was branched on");
            if choices[k] {
                MutexOrder { first: key.0, second: key.1 }
            } else {
                MutexOrder { first: key.1, second: key.0 }
            }
        })
        .collect();
    Ok(Schedule { starts, orderings, makespan })
}

/// Checks every constraint family of `inst` against `schedule`.
pub fn verify_schedule(inst: &SchedulingInstance, schedule: &Schedule, tol: f64) -> Result<(), String> {
    let s = &schedule.starts;
    let d = &inst.durations;
    if s.len() != inst.tasks() {
        return Err(format!("{} start times for {} tasks", s.len(), inst.tasks()));
    }
    let c = makespan_of(s, d);
    if (c - schedule.makespan).abs() > tol {
        return Err(format!("makespan {} but latest finish is {c}", schedule.makespan));
    }
    for i in 0..s.len() {
        if s[i] < inst.initial_travel[i] - tol {
            return Err(format!("task {i} starts at {} before its coalition arrives at {}", s[i], inst.initial_travel[i]));
        }
    }
    for &(i, j) in &inst.precedence {
        if s[j] < s[i] + inst.edge_weight(i, j) - tol {
            return Err(format!("precedence ({i}, {j}) violated"));
        }
    }
    if schedule.orderings.len() != inst.mutex.len() {
        return Err("one ordering per mutex pair is required".into());
    }
    for (&(i, j), order) in inst.mutex.iter().zip(&schedule.orderings) {
        let (a, b) = (order.first, order.second);
        if !((a == i && b == j) || (a == j && b == i)) {
            return Err(format!("ordering {order:?} does not match pair ({i}, {j})"));
        }
        if s[b] < s[a] + inst.edge_weight(a, b) - tol {
            return Err(format!("mutex ({i}, {j}) overlaps under ordering {a} before {b}"));
        }
    }
    Ok(())
}

fn transitive_closure(tasks: usize, precedence: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let mut reach = vec![vec![false; tasks]; tasks];
    for &(i, j) in precedence {
        reach[i][j] = true;
    }
    for k in 0..tasks {
        for i in 0..tasks {
            if reach[i][k] {
                for j in 0..tasks {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    reach
}

/// Scheduling instance for `allocation`.
///
/// Tasks whose coalitions share a robot become mutex; the robot then needs
/// `x_ij` (slowest shared robot) between the two sites. Pairs already ordered
/// by precedence, directly or transitively, leave the mutex set. The
/// precedence edges kept are the transitive reduction plus any implied pair
/// that carries travel time.
pub fn build_scheduling_instance(
    domain: &ProblemDomain,
    allocation: &Allocation,
    oracle: &TravelOracle,
    mode: TravelMode,
) -> Result<SchedulingInstance, ScheduleError> {
    let m = domain.tasks();
    let tasks = &domain.network.tasks;
    let starts = &domain.robot_starts;

    let mut initial_travel = vec![0.0; m];
    for (i, x) in initial_travel.iter_mut().enumerate() {
        for r in allocation.members(i) {
            *x = f64::max(*x, oracle.travel_time(r, starts[r], tasks[i].site, mode)?);
        }
    }

    let mut transition = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let shared = allocation.coalition(i) & allocation.coalition(j);
            for r in crate::model::mask_members(shared) {
                let t = oracle.travel_time(r, tasks[i].site, tasks[j].site, mode)?;
                transition[i][j] = f64::max(transition[i][j], t);
            }
        }
    }

    let reach = transitive_closure(m, &domain.network.precedence);
    let mut precedence = Vec::new();
    for i in 0..m {
        for j in 0..m {
            if i == j || !reach[i][j] {
                continue;
            }
            let implied = (0..m).any(|k| k != i && k != j && reach[i][k] && reach[k][j]);
            if !implied || transition[i][j] > 0.0 {
                precedence.push((i, j));
            }
        }
    }

    let mut mutex: Vec<(usize, usize)> = domain
        .network
        .mutex
        .iter()
        .filter(|(i, j)| i != j)
        .map(|&(i, j)| (i.min(j), i.max(j)))
        .collect();
    for i in 0..m {
        for j in i + 1..m {
            if allocation.coalition(i) & allocation.coalition(j) != 0 {
                mutex.push((i, j));
            }
        }
    }
    mutex.sort_unstable();
    mutex.dedup();
    mutex.retain(|&(i, j)| !reach[i][j] && !reach[j][i]);

    Ok(SchedulingInstance {
        durations: tasks.iter().map(|t| t.duration).collect(),
        initial_travel,
        transition,
        precedence,
        mutex,
    })
}

/// Builds and solves the schedule of one allocation.
pub fn schedule_allocation(
    domain: &ProblemDomain,
    allocation: &Allocation,
    oracle: &TravelOracle,
    mode: TravelMode,
) -> Result<(SchedulingInstance, Schedule), ScheduleError> {
    let inst = build_scheduling_instance(domain, allocation, oracle, mode)?;
    let schedule = solve_schedule(&inst)?;
    Ok((inst, schedule))
}

/// Makespan of the root allocation (every robot on every task), the longest
/// schedule any allocation can have.
pub fn worst_makespan(domain: &ProblemDomain, oracle: &TravelOracle, mode: TravelMode) -> Result<f64, ScheduleError> {
    let (_, schedule) = schedule_allocation(domain, &domain.root_allocation(), oracle, mode)?;
    Ok(schedule.makespan)
}
