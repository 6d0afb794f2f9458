//! Problem-instance types shared by every other module, plus instance
//! validation and the JSON instance format.
//!
//! Robots and tasks are identified by dense 0-based indices. A robot may be
//! assigned to any number of tasks, including none.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::efficacy::{EfficacyDocument, EfficacyModel};
use crate::motion::{Cell, TravelOracle, WorldGrid};
use crate::scheduler::Schedule;

/// Allocation rows are stored as `u64` bitmasks.
pub const MAX_ROBOTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("ragged matrix: row {row} has {got} entries, expected {expected}")]
    Ragged { row: usize, expected: usize, got: usize },
    #[error("allocation entries must be 0 or 1 (row {row}, column {col})")]
    NonBinary { row: usize, col: usize },
    #[error("{0} robots exceed the supported maximum of 64")]
    TooManyRobots(usize),
}

/// Dense row-major matrix of reals. Serialized as an array of rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(ModelError::Ragged { row: i, expected: cols, got: row.len() });
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows().map(<[f64]>::to_vec).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Squared Frobenius distance.
    pub fn distance_sq(&self, other: &Matrix) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

impl Serialize for Matrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Matrix::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

/// N×U matrix of per-robot trait values; row `i` is robot `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TeamTraitMatrix(Matrix);

impl TeamTraitMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        Matrix::from_rows(rows).map(TeamTraitMatrix)
    }

    pub fn robots(&self) -> usize {
        self.0.rows()
    }

    pub fn traits(&self) -> usize {
        self.0.cols()
    }

    pub fn robot(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    /// Column sums: the traits of the whole team.
    pub fn totals(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.traits()];
        for row in self.0.iter_rows() {
            for (t, v) in totals.iter_mut().zip(row) {
                *t += v;
            }
        }
        totals
    }

    /// Trait sum of the robots in `mask`.
    pub fn coalition_traits(&self, mask: u64) -> Vec<f64> {
        let mut y = vec![0.0; self.traits()];
        for robot in mask_members(mask) {
            for (acc, v) in y.iter_mut().zip(self.robot(robot)) {
                *acc += v;
            }
        }
        y
    }
}

/// Mask with the lowest `robots` bits set.
pub fn full_mask(robots: usize) -> u64 {
    if robots >= 64 {
        u64::MAX
    } else {
        (1u64 << robots) - 1
    }
}

/// Robot indices set in `mask`, ascending.
pub fn mask_members(mask: u64) -> impl Iterator<Item = usize> {
    let mut rest = mask;
    std::iter::from_fn(move || {
        if rest == 0 {
            None
        } else {
            let bit = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            Some(bit)
        }
    })
}

/// Binary M×N assignment of robots to tasks. Row `m` is the coalition for
/// task `m`, stored as a bitmask over robots.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Allocation {
    robots: usize,
    rows: Vec<u64>,
}

impl fmt::Debug for Allocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<String> = self
            .rows
            .iter()
            .map(|&r| (0..self.robots).map(|i| if r >> i & 1 == 1 { '1' } else { '0' }).collect())
            .collect();
        write!(f, "Allocation[{}]", rows.join(" "))
    }
}

impl Allocation {
    pub fn null(tasks: usize, robots: usize) -> Self {
        assert!(robots <= MAX_ROBOTS, "at most 64 robots are supported");
        Allocation { robots, rows: vec![0; tasks] }
    }

    /// Every robot on every task.
    pub fn root(tasks: usize, robots: usize) -> Self {
        assert!(robots <= MAX_ROBOTS, "at most 64 robots are supported");
        Allocation { robots, rows: vec![full_mask(robots); tasks] }
    }

    pub fn from_masks(robots: usize, rows: Vec<u64>) -> Result<Self, ModelError> {
        if robots > MAX_ROBOTS {
            return Err(ModelError::TooManyRobots(robots));
        }
        let full = full_mask(robots);
        if let Some(m) = rows.iter().position(|&r| r & !full != 0) {
            return Err(ModelError::DimensionMismatch(format!(
                "row {m} assigns a robot index >= {robots}"
            )));
        }
        Ok(Allocation { robots, rows })
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self, ModelError> {
        let robots = rows.first().map_or(0, Vec::len);
        if robots > MAX_ROBOTS {
            return Err(ModelError::TooManyRobots(robots));
        }
        let mut masks = Vec::with_capacity(rows.len());
        for (m, row) in rows.iter().enumerate() {
            if row.len() != robots {
                return Err(ModelError::Ragged { row: m, expected: robots, got: row.len() });
            }
            let mut mask = 0u64;
            for (n, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => mask |= 1 << n,
                    _ => return Err(ModelError::NonBinary { row: m, col: n }),
                }
            }
            masks.push(mask);
        }
        Ok(Allocation { robots, rows: masks })
    }

    pub fn tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn robots(&self) -> usize {
        self.robots
    }

    pub fn coalition(&self, task: usize) -> u64 {
        self.rows[task]
    }

    pub fn masks(&self) -> &[u64] {
        &self.rows
    }

    pub fn contains(&self, task: usize, robot: usize) -> bool {
        self.rows[task] >> robot & 1 == 1
    }

    pub fn members(&self, task: usize) -> impl Iterator<Item = usize> {
        mask_members(self.rows[task])
    }

    /// Total number of 1-entries.
    pub fn assigned(&self) -> u32 {
        self.rows.iter().map(|r| r.count_ones()).sum()
    }

    pub fn with(&self, task: usize, robot: usize) -> Self {
        let mut next = self.clone();
        next.rows[task] |= 1 << robot;
        next
    }

    pub fn without(&self, task: usize, robot: usize) -> Self {
        let mut next = self.clone();
        next.rows[task] &= !(1 << robot);
        next
    }

    pub fn set_coalition(&mut self, task: usize, mask: u64) {
        self.rows[task] = mask & full_mask(self.robots);
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        self.rows
            .iter()
            .map(|&r| (0..self.robots).map(|i| (r >> i & 1) as u8).collect())
            .collect()
    }

    /// Relaxed matrix view with 0.0/1.0 entries.
    pub fn to_matrix(&self) -> Matrix {
        let rows = self
            .rows
            .iter()
            .map(|&r| (0..self.robots).map(|i| (r >> i & 1) as f64).collect())
            .collect();
        Matrix::from_rows(rows).expect("allocation rows share a width")
    }
}

impl Serialize for Allocation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Allocation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<u8>>::deserialize(d)?;
        Allocation::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Y = A·Q, the traits each task receives.
pub fn aggregated_traits(allocation: &Allocation, traits: &TeamTraitMatrix) -> Result<Matrix, ModelError> {
    if allocation.robots() != traits.robots() {
        return Err(ModelError::DimensionMismatch(format!(
            "allocation has {} columns but the team has {} robots",
            allocation.robots(),
            traits.robots()
        )));
    }
    let mut y = Matrix::zeros(allocation.tasks(), traits.traits());
    for m in 0..allocation.tasks() {
        let row = traits.coalition_traits(allocation.coalition(m));
        y.row_mut(m).copy_from_slice(&row);
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub duration: f64,
    pub site: Cell,
    pub initial: Cell,
    pub terminal: Cell,
}

impl TaskSpec {
    /// Task performed in place: initial and terminal configurations at the site.
    pub fn at(site: Cell, duration: f64) -> Self {
        TaskSpec { duration, site, initial: site, terminal: site }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskNetwork {
    pub tasks: Vec<TaskSpec>,
    /// `(i, j)`: task `i` finishes before task `j` starts.
    pub precedence: Vec<(usize, usize)>,
    /// Unordered pairs of tasks that may not overlap in time.
    pub mutex: Vec<(usize, usize)>,
}

impl TaskNetwork {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Tasks involved in a precedence cycle (empty when acyclic). Pairs with
    /// out-of-range indices are ignored.
    pub fn precedence_cycle_members(&self) -> Vec<usize> {
        let m = self.tasks.len();
        let mut indegree = vec![0usize; m];
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); m];
        for &(i, j) in &self.precedence {
            if i < m && j < m {
                out[i].push(j);
                indegree[j] += 1;
            }
        }
        let mut stack: Vec<usize> = (0..m).filter(|&i| indegree[i] == 0).collect();
        let mut removed = vec![false; m];
        while let Some(i) = stack.pop() {
            removed[i] = true;
            for &j in &out[i] {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    stack.push(j);
                }
            }
        }
        (0..m).filter(|&i| !removed[i]).collect()
    }
}

/// Complete problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemDomain {
    pub network: TaskNetwork,
    pub traits: TeamTraitMatrix,
    pub efficacy: EfficacyModel,
    pub world: WorldGrid,
    pub robot_starts: Vec<Cell>,
    /// Per-robot speeds; `None` means every robot moves at speed 1.
    pub speeds: Option<Vec<f64>>,
    pub time_budget: f64,
    pub alpha: f64,
}

impl ProblemDomain {
    pub fn tasks(&self) -> usize {
        self.network.len()
    }

    pub fn robots(&self) -> usize {
        self.traits.robots()
    }

    pub fn speeds(&self) -> Vec<f64> {
        self.speeds.clone().unwrap_or_else(|| vec![1.0; self.robots()])
    }

    pub fn travel_oracle(&self) -> TravelOracle {
        TravelOracle::new(self.world.clone(), self.speeds())
    }

    pub fn root_allocation(&self) -> Allocation {
        Allocation::root(self.tasks(), self.robots())
    }

    pub fn null_allocation(&self) -> Allocation {
        Allocation::null(self.tasks(), self.robots())
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        ProblemDomain { alpha, ..self.clone() }
    }

    pub fn with_time_budget(&self, time_budget: f64) -> Self {
        ProblemDomain { time_budget, ..self.clone() }
    }

    pub fn with_efficacy(&self, efficacy: EfficacyModel) -> Self {
        ProblemDomain { efficacy, ..self.clone() }
    }
}

/// One invariant violation found by [`validate_instance`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: String,
    pub message: String,
}

impl Violation {
    fn new(code: &str, message: impl Into<String>) -> Self {
        Violation { code: code.to_string(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

/// Every invariant violation of `domain`; empty iff the instance is well formed.
pub fn validate_instance(domain: &ProblemDomain) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = domain.robots();
    let u = domain.traits.traits();
    let m = domain.tasks();
    let world = &domain.world;

    if n == 0 || u == 0 {
        out.push(Violation::new("traits.empty", "the team needs at least one robot and one trait"));
    }
    if n > MAX_ROBOTS {
        out.push(Violation::new("robots.too_many", format!("{n} robots exceed the maximum of 64")));
    }
    for i in 0..n {
        for (t, &v) in domain.traits.robot(i).iter().enumerate() {
            if !(v >= 0.0 && v.is_finite()) {
                out.push(Violation::new("traits.negative", format!("robot {i} trait {t} is {v}")));
            }
        }
    }

    if world.width() == 0 || world.height() == 0 {
        out.push(Violation::new("world.empty", "world width and height must be positive"));
    }
    for &cell in world.obstacles() {
        if !world.contains(cell) {
            out.push(Violation::new(
                "world.obstacle_out_of_bounds",
                format!("obstacle ({}, {}) lies outside the grid", cell.0, cell.1),
            ));
        }
    }

    if m == 0 {
        out.push(Violation::new("tasks.empty", "the task network has no tasks"));
    }
    for (i, task) in domain.network.tasks.iter().enumerate() {
        if !(task.duration >= 0.0 && task.duration.is_finite()) {
            out.push(Violation::new("task.duration", format!("task {i} has duration {}", task.duration)));
        }
        for (what, cell) in [("site", task.site), ("initial", task.initial), ("terminal", task.terminal)] {
            if !world.contains(cell) {
                out.push(Violation::new(
                    "task.out_of_bounds",
                    format!("task {i} {what} ({}, {}) lies outside the grid", cell.0, cell.1),
                ));
            }
        }
        if world.is_blocked(task.site) {
            out.push(Violation::new("task.site_blocked", format!("task {i} site is an obstacle")));
        }
    }

    let mut bad_index = false;
    for &(i, j) in &domain.network.precedence {
        if i >= m || j >= m {
            bad_index = true;
            out.push(Violation::new("precedence.index", format!("precedence ({i}, {j}) references a missing task")));
        }
    }
    let cycle = domain.network.precedence_cycle_members();
    if !cycle.is_empty() {
        out.push(Violation::new("precedence.cycle", format!("precedence cycle through tasks {cycle:?}")));
    }
    for &(i, j) in &domain.network.mutex {
        if i >= m || j >= m {
            bad_index = true;
            out.push(Violation::new("mutex.index", format!("mutex ({i}, {j}) references a missing task")));
        } else if i == j {
            out.push(Violation::new("mutex.self", format!("mutex ({i}, {i}) pairs a task with itself")));
        }
    }

    if !(domain.time_budget > 0.0 && domain.time_budget.is_finite()) {
        out.push(Violation::new("budget.non_positive", format!("time budget is {}", domain.time_budget)));
    }
    if !(0.0..=1.0).contains(&domain.alpha) {
        out.push(Violation::new("alpha.range", format!("alpha {} is outside [0, 1]", domain.alpha)));
    }

    if domain.robot_starts.len() != n {
        out.push(Violation::new(
            "robot_starts.count",
            format!("{} start cells for {n} robots", domain.robot_starts.len()),
        ));
    }
    for (i, &cell) in domain.robot_starts.iter().enumerate() {
        if !world.contains(cell) {
            out.push(Violation::new("robot_starts.out_of_bounds", format!("robot {i} starts outside the grid")));
        } else if world.is_blocked(cell) {
            out.push(Violation::new("robot_starts.blocked", format!("robot {i} starts on an obstacle")));
        }
    }
    if let Some(speeds) = &domain.speeds {
        if speeds.len() != n {
            out.push(Violation::new("speeds.count", format!("{} speeds for {n} robots", speeds.len())));
        }
        for (i, &s) in speeds.iter().enumerate() {
            if !(s > 0.0 && s.is_finite()) {
                out.push(Violation::new("speeds.non_positive", format!("robot {i} speed is {s}")));
            }
        }
    }

    let maps = domain.efficacy.len();
    let mut efficacy_ok = true;
    if maps != m {
        efficacy_ok = false;
        out.push(Violation::new("efficacy.count", format!("{maps} trait-efficacy maps for {m} tasks")));
    }
    for (i, map) in domain.efficacy.maps().iter().enumerate() {
        if map.dim() != u {
            efficacy_ok = false;
            out.push(Violation::new(
                "efficacy.dimension",
                format!("map {i} takes {} traits, the team has {u}", map.dim()),
            ));
        }
    }
    if efficacy_ok && n <= MAX_ROBOTS && !bad_index && n > 0 && u > 0 {
        let root = domain.efficacy.total(&domain.root_allocation(), &domain.traits);
        let null = domain.efficacy.total(&domain.null_allocation(), &domain.traits);
        match (root, null) {
            (Ok(root), Ok(null)) if root > null => {}
            (Ok(root), Ok(null)) => out.push(Violation::new(
                "efficacy.degenerate",
                format!("root efficacy {root} does not exceed null efficacy {null}"),
            )),
            (Err(e), _) | (_, Err(e)) => out.push(Violation::new("efficacy.evaluation", e.to_string())),
        }
    }

    out
}

#[derive(Serialize, Deserialize)]
struct InstanceDocument {
    traits: Vec<Vec<f64>>,
    tasks: Vec<TaskSpec>,
    precedence: Vec<(usize, usize)>,
    mutex: Vec<(usize, usize)>,
    robot_starts: Vec<Cell>,
    time_budget: f64,
    alpha: f64,
    world: WorldGrid,
    efficacy: EfficacyDocument,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    speeds: Option<Vec<f64>>,
}

fn schema(path: impl Into<String>, message: impl fmt::Display) -> ModelError {
    ModelError::Schema { path: path.into(), message: message.to_string() }
}

/// Parses an instance document. Errors name the offending field.
pub fn load_instance(text: &str) -> Result<ProblemDomain, ModelError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: InstanceDocument = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema(if path == "." || path == "?" { String::new() } else { path }, e.inner())
    })?;
    let traits = TeamTraitMatrix::new(doc.traits).map_err(|e| match e {
        ModelError::Ragged { row, .. } => schema(format!("traits[{row}]"), &e),
        other => schema("traits", other),
    })?;
    let efficacy = EfficacyModel::from_document(doc.efficacy, &traits)
        .map_err(|(path, msg)| schema(format!("efficacy{path}"), msg))?;
    Ok(ProblemDomain {
        network: TaskNetwork { tasks: doc.tasks, precedence: doc.precedence, mutex: doc.mutex },
        traits,
        efficacy,
        world: doc.world,
        robot_starts: doc.robot_starts,
        speeds: doc.speeds,
        time_budget: doc.time_budget,
        alpha: doc.alpha,
    })
}

pub fn save_instance(domain: &ProblemDomain) -> String {
    let doc = InstanceDocument {
        traits: domain.traits.matrix().to_rows(),
        tasks: domain.network.tasks.clone(),
        precedence: domain.network.precedence.clone(),
        mutex: domain.network.mutex.clone(),
        robot_starts: domain.robot_starts.clone(),
        time_budget: domain.time_budget,
        alpha: domain.alpha,
        world: domain.world.clone(),
        efficacy: domain.efficacy.to_document(),
        speeds: domain.speeds.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("instance documents always serialize")
}

/// One robot's trip between consecutive duties, as planned on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionPlan {
    pub robot: usize,
    pub leg: usize,
    /// `None` for the first leg, which starts at the robot's start cell.
    pub from_task: Option<usize>,
    pub to_task: usize,
    pub path: Vec<Cell>,
}

/// Accepted allocation with its schedule and the plans behind its travel times.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub allocation: Allocation,
    pub schedule: Schedule,
    pub motion_plans: Vec<MotionPlan>,
    pub efficacy_total: f64,
    pub makespan: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::efficacy::{LinearSaturating, TraitEfficacyMap};

    pub(crate) fn two_task_domain() -> ProblemDomain {
        let traits = TeamTraitMatrix::new(vec![vec![1.0, 0.5], vec![0.0, 2.0]]).unwrap();
        let map = |w: Vec<f64>| TraitEfficacyMap::LinearSaturating(LinearSaturating::new(w, 3.0).unwrap());
        ProblemDomain {
            network: TaskNetwork {
                tasks: vec![TaskSpec::at(Cell(1, 1), 2.0), TaskSpec::at(Cell(3, 3), 1.5)],
                precedence: vec![(0, 1)],
                mutex: vec![],
            },
            traits,
            efficacy: EfficacyModel::new(vec![map(vec![1.0, 0.0]), map(vec![0.5, 0.5])]).unwrap(),
            world: WorldGrid::new(5, 5, [Cell(2, 2)]),
            robot_starts: vec![Cell(0, 0), Cell(4, 4)],
            speeds: None,
            time_budget: 20.0,
            alpha: 0.3,
        }
    }

    fn codes(d: &ProblemDomain) -> Vec<String> {
        validate_instance(d).into_iter().map(|v| v.code).collect()
    }

    #[test]
    fn well_formed_instance_has_no_violations() {
        assert!(validate_instance(&two_task_domain()).is_empty());
    }

    #[test]
    fn two_cycle_is_reported_once() {
        let mut d = two_task_domain();
        d.network.precedence = vec![(0, 1), (1, 0)];
        assert_eq!(codes(&d), vec!["precedence.cycle"]);
    }

    #[test]
    fn zero_budget_is_reported() {
        let d = two_task_domain().with_time_budget(0.0);
        assert_eq!(codes(&d), vec!["budget.non_positive"]);
    }

    #[test]
    fn assorted_violations() {
        let mut d = two_task_domain();
        d.alpha = 1.5;
        d.robot_starts = vec![Cell(2, 2), Cell(9, 9)];
        d.network.mutex = vec![(0, 0), (0, 7)];
        d.network.tasks[1].duration = -1.0;
        let c = codes(&d);
        for expected in [
            "alpha.range",
            "robot_starts.blocked",
            "robot_starts.out_of_bounds",
            "mutex.self",
            "mutex.index",
            "task.duration",
        ] {
            assert!(c.contains(&expected.to_string()), "missing {expected} in {c:?}");
        }
    }

    #[test]
    fn aggregated_traits_examples() {
        let q = TeamTraitMatrix::new(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let y = aggregated_traits(&Allocation::null(3, 2), &q).unwrap();
        assert_eq!(y, Matrix::zeros(3, 2));
        let y = aggregated_traits(&Allocation::root(1, 2), &q).unwrap();
        assert_eq!(y.to_rows(), vec![vec![4.0, 6.0]]);

        let q = TeamTraitMatrix::new(vec![vec![3.0], vec![5.0]]).unwrap();
        let a = Allocation::from_rows(&[vec![1, 0]]).unwrap();
        assert_eq!(aggregated_traits(&a, &q).unwrap().to_rows(), vec![vec![3.0]]);

        let wrong = Allocation::root(1, 3);
        assert!(matches!(aggregated_traits(&wrong, &q), Err(ModelError::DimensionMismatch(_))));
    }

    #[test]
    fn allocation_rejects_non_binary_entries() {
        assert_eq!(Allocation::from_rows(&[vec![0, 2]]), Err(ModelError::NonBinary { row: 0, col: 1 }));
        assert!(Allocation::from_rows(&[vec![0, 1], vec![1]]).is_err());
    }

    #[test]
    fn minimal_document_loads() {
        let text = r#"{
            "traits": [[1.0]],
            "tasks": [{"duration": 1.0, "site": [0, 0], "initial": [0, 0], "terminal": [0, 0]}],
            "precedence": [], "mutex": [],
            "robot_starts": [[0, 0]],
            "time_budget": 5.0, "alpha": 0.2,
            "world": {"width": 1, "height": 1, "obstacles": []},
            "efficacy": {"kind": "linear-saturating", "per_task": [{"weights": [1.0]}]}
        }"#;
        let d = load_instance(text).unwrap();
        assert_eq!((d.tasks(), d.robots()), (1, 1));
        assert!(validate_instance(&d).is_empty());
    }

    #[test]
    fn missing_key_is_named() {
        let text = r#"{
            "traits": [[1.0]],
            "tasks": [{"duration": 1.0, "site": [0, 0], "initial": [0, 0], "terminal": [0, 0]}],
            "precedence": [], "mutex": [],
            "robot_starts": [[0, 0]],
            "alpha": 0.2,
            "world": {"width": 1, "height": 1, "obstacles": []},
            "efficacy": {"kind": "linear-saturating", "per_task": [{"weights": [1.0]}]}
        }"#;
        let err = load_instance(text).unwrap_err();
        assert!(err.to_string().contains("time_budget"), "{err}");
    }

    #[test]
    fn nested_schema_errors_carry_a_path() {
        let text = r#"{
            "traits": [[1.0]],
            "tasks": [{"duration": "long", "site": [0, 0], "initial": [0, 0], "terminal": [0, 0]}],
            "precedence": [], "mutex": [], "robot_starts": [[0, 0]],
            "time_budget": 5.0, "alpha": 0.2,
            "world": {"width": 1, "height": 1, "obstacles": []},
            "efficacy": {"kind": "linear-saturating", "per_task": [{"weights": [1.0]}]}
        }"#;
        match load_instance(text).unwrap_err() {
            ModelError::Schema { path, .. } => assert_eq!(path, "tasks[0].duration"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn save_then_load_is_identity() {
        let d = two_task_domain();
        assert_eq!(load_instance(&save_instance(&d)).unwrap(), d);
    }
}
