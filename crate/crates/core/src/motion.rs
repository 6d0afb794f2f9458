//! Grid world, shortest-path planning and the memoized travel-time oracle.
//!
//! The world is a 4-connected occupancy grid with unit edge cost. Paths are
//! planned with A* under the Manhattan heuristic; among nodes with equal
//! priority the one with the smaller cell index (`y * width + x`) is expanded
//! first, which makes every returned path deterministic.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A grid cell `(x, y)`. Serialized as a two-element array.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell(pub i32, pub i32);

impl Cell {
    pub fn x(self) -> i32 {
        self.0
    }

    pub fn y(self) -> i32 {
        self.1
    }

    pub fn euclidean(self, other: Cell) -> f64 {
        let dx = f64::from(self.0 - other.0);
        let dy = f64::from(self.1 - other.1);
        dx.hypot(dy)
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        self.0.abs_diff(other.0) + self.1.abs_diff(other.1)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MotionError {
    #[error("cell ({}, {}) is outside the world", .0 .0, .0 .1)]
    OutOfBounds(Cell),
    #[error("cell ({}, {}) is blocked by an obstacle", .0 .0, .0 .1)]
    Blocked(Cell),
    #[error("no path from ({}, {}) to ({}, {})", .from.0, .from.1, .to.0, .to.1)]
    Unreachable { from: Cell, to: Cell },
    #[error("robot index {robot} has no speed entry (team of {robots})")]
    UnknownRobot { robot: usize, robots: usize },
}

/// Static occupancy grid. Obstacles outside the bounds are kept (so that
/// validation can report them) but have no effect on planning.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "WorldDocument", into = "WorldDocument")]
pub struct WorldGrid {
    width: u32,
    height: u32,
    obstacles: BTreeSet<Cell>,
    blocked: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct WorldDocument {
    width: u32,
    height: u32,
    obstacles: Vec<Cell>,
}

impl From<WorldDocument> for WorldGrid {
    fn from(doc: WorldDocument) -> Self {
        WorldGrid::new(doc.width, doc.height, doc.obstacles)
    }
}

impl From<WorldGrid> for WorldDocument {
    fn from(world: WorldGrid) -> Self {
        WorldDocument {
            width: world.width,
            height: world.height,
            obstacles: world.obstacles.into_iter().collect(),
        }
    }
}

impl PartialEq for WorldGrid {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.obstacles == other.obstacles
    }
}

impl WorldGrid {
    pub fn new(width: u32, height: u32, obstacles: impl IntoIterator<Item = Cell>) -> Self {
        let obstacles: BTreeSet<Cell> = obstacles.into_iter().collect();
        let mut blocked = vec![false; width as usize * height as usize];
        for &cell in &obstacles {
            if cell.0 >= 0 && cell.1 >= 0 && (cell.0 as u32) < width && (cell.1 as u32) < height {
                blocked[cell.1 as usize * width as usize + cell.0 as usize] = true;
            }
        }
        WorldGrid { width, height, obstacles, blocked }
    }

    pub fn open(width: u32, height: u32) -> Self {
        Self::new(width, height, std::iter::empty())
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn obstacles(&self) -> &BTreeSet<Cell> {
        &self.obstacles
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.0 >= 0 && cell.1 >= 0 && (cell.0 as u32) < self.width && (cell.1 as u32) < self.height
    }

    pub fn is_blocked(&self, cell: Cell) -> bool {
        self.contains(cell) && self.blocked[self.index(cell)]
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        self.contains(cell) && !self.blocked[self.index(cell)]
    }

    fn index(&self, cell: Cell) -> usize {
        cell.1 as usize * self.width as usize + cell.0 as usize
    }

    fn cell_at(&self, index: usize) -> Cell {
        let w = self.width as usize;
        Cell((index % w) as i32, (index / w) as i32)
    }

    /// Free 4-neighbours in a fixed order: left, right, down, up.
    fn neighbours(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        [(-1, 0), (1, 0), (0, -1), (0, 1)]
            .into_iter()
            .map(move |(dx, dy)| Cell(cell.0 + dx, cell.1 + dy))
            .filter(|&c| self.is_free(c))
    }

    fn check_endpoint(&self, cell: Cell) -> Result<(), MotionError> {
        if !self.contains(cell) {
            Err(MotionError::OutOfBounds(cell))
        } else if self.is_blocked(cell) {
            Err(MotionError::Blocked(cell))
        } else {
            Ok(())
        }
    }

    /// Cells reachable from `start` (breadth-first), including `start` itself.
    pub fn reachable_from(&self, start: Cell) -> BTreeSet<Cell> {
        let mut seen = BTreeSet::new();
        if !self.is_free(start) {
            return seen;
        }
        let mut queue = std::collections::VecDeque::from([start]);
        seen.insert(start);
        while let Some(cell) = queue.pop_front() {
            for next in self.neighbours(cell) {
                if seen.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        seen
    }
}

/// Optimal 4-connected path from `from` to `to`, both endpoints included.
/// A path from a cell to itself is `[from]` (length 0).
pub fn plan_path(world: &WorldGrid, from: Cell, to: Cell) -> Result<Vec<Cell>, MotionError> {
    world.check_endpoint(from)?;
    world.check_endpoint(to)?;
    if from == to {
        return Ok(vec![from]);
    }

    let cells = world.width as usize * world.height as usize;
    let mut cost = vec![u32::MAX; cells];
    let mut parent = vec![usize::MAX; cells];
    let mut closed = vec![false; cells];
    let mut open = BinaryHeap::new();

    let start = world.index(from);
    let goal = world.index(to);
    cost[start] = 0;
    open.push(Reverse((from.manhattan(to), start)));

    while let Some(Reverse((_, current))) = open.pop() {
        if closed[current] {
            continue;
        }
        if current == goal {
            let mut path = vec![to];
            let mut at = goal;
            while at != start {
                at = parent[at];
                path.push(world.cell_at(at));
            }
            path.reverse();
            return Ok(path);
        }
        closed[current] = true;
        let here = world.cell_at(current);
        let g = cost[current] + 1;
        for next in world.neighbours(here) {
            let idx = world.index(next);
            if !closed[idx] && g < cost[idx] {
                cost[idx] = g;
                parent[idx] = current;
                open.push(Reverse((g + next.manhattan(to), idx)));
            }
        }
    }
    Err(MotionError::Unreachable { from, to })
}

/// Number of moves in a planned path.
pub fn path_length(path: &[Cell]) -> usize {
    path.len().saturating_sub(1)
}

/// How travel times are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TravelMode {
    /// Straight-line distance over speed; never invokes the planner.
    Estimate,
    /// Planned path length over speed; plans are memoized.
    Planned,
}

type PlanMemo = HashMap<(Cell, Cell), Result<Arc<Vec<Cell>>, MotionError>>;

/// Memoized travel-time oracle shared by the scheduler and the search.
///
/// Safe to share across threads. Two threads racing on the same key may both
/// plan; the stored result is identical either way.
#[derive(Debug)]
pub struct TravelOracle {
    world: WorldGrid,
    speeds: Vec<f64>,
    memo: RwLock<PlanMemo>,
    planner_calls: AtomicU64,
    planning_nanos: AtomicU64,
}

impl TravelOracle {
    pub fn new(world: WorldGrid, speeds: Vec<f64>) -> Self {
        TravelOracle {
            world,
            speeds,
            memo: RwLock::new(HashMap::new()),
            planner_calls: AtomicU64::new(0),
            planning_nanos: AtomicU64::new(0),
        }
    }

    /// Oracle where every robot moves at speed 1.
    pub fn unit_speed(world: WorldGrid, robots: usize) -> Self {
        Self::new(world, vec![1.0; robots])
    }

    pub fn world(&self) -> &WorldGrid {
        &self.world
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    fn speed(&self, robot: usize) -> Result<f64, MotionError> {
        self.speeds
            .get(robot)
            .copied()
            .ok_or(MotionError::UnknownRobot { robot, robots: self.speeds.len() })
    }

    /// Memoized path between two cells.
    pub fn path(&self, from: Cell, to: Cell) -> Result<Arc<Vec<Cell>>, MotionError> {
        if let Some(hit) = self.memo.read().expect("plan memo poisoned").get(&(from, to)) {
            return hit.clone();
        }
        let started = Instant::now();
        let planned = plan_path(&self.world, from, to).map(Arc::new);
        self.planning_nanos
            .fetch_add(started.elapsed().as_nanos() as u64, Ordering::Relaxed);
        self.planner_calls.fetch_add(1, Ordering::Relaxed);
        self.memo
            .write()
            .expect("plan memo poisoned")
            .entry((from, to))
            .or_insert(planned)
            .clone()
    }

    pub fn travel_time(
        &self,
        robot: usize,
        from: Cell,
        to: Cell,
        mode: TravelMode,
    ) -> Result<f64, MotionError> {
        let speed = self.speed(robot)?;
        match mode {
            TravelMode::Estimate => Ok(from.euclidean(to) / speed),
            TravelMode::Planned => {
                let path = self.path(from, to)?;
                Ok(path_length(&path) as f64 / speed)
            }
        }
    }

    /// Memoized plan without planning, if one exists.
    pub fn cached_path(&self, from: Cell, to: Cell) -> Option<Arc<Vec<Cell>>> {
        self.memo
            .read()
            .expect("plan memo poisoned")
            .get(&(from, to))
            .and_then(|r| r.as_ref().ok().cloned())
    }

    pub fn clear_memo(&self) {
        self.memo.write().expect("plan memo poisoned").clear();
    }

    /// How many times the planner actually ran (memo misses).
    pub fn planner_calls(&self) -> u64 {
        self.planner_calls.load(Ordering::Relaxed)
    }

    /// Wall time spent inside the planner, in seconds.
    pub fn planning_seconds(&self) -> f64 {
        self.planning_nanos.load(Ordering::Relaxed) as f64 * 1e-9
    }
}
