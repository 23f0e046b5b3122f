//! A* over belief grids, geodesic distances on ground truth, and agent kinematics.
//!
//! Planning is 4-connected with unit step costs; path lengths are integer cell
//! counts and scale to meters through the scene resolution.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{occ, Cell, Grid, NEIGHBORS_4};
use crate::scene::Scene;
use crate::sensor::{normalize_heading, AgentState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    MoveForward,
    TurnLeft,
    TurnRight,
    LookUp,
    LookDown,
    Stop,
}

/// How A* treats unknown (0.5) cells.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnknownPolicy {
    #[default]
    Traversable,
    Blocked,
}

impl UnknownPolicy {
    #[inline]
    pub fn passable(self, v: f32) -> bool {
        occ::is_free(v) || (self == UnknownPolicy::Traversable && occ::is_unknown(v))
    }
}

/// Ordered cells from start to goal, 4-connected.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Path(pub Vec<Cell>);

impl Path {
    pub fn cells(&self) -> &[Cell] {
        &self.0
    }

    /// Number of cells, start and goal included.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of moves.
    pub fn cost(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn goal(&self) -> Option<Cell> {
        self.0.last().copied()
    }

    pub fn position_of(&self, cell: Cell) -> Option<usize> {
        self.0.iter().position(|&c| c == cell)
    }
}

/// Minimum-length 4-connected path over a belief grid.
///
/// Returns `Ok(None)` when the goal is unreachable or not passable itself.
pub fn astar(grid: &Grid<f32>, start: Cell, goal: Cell, unknown: UnknownPolicy) -> Result<Option<Path>> {
    if !grid.in_bounds(start) {
        return Err(Error::OutOfBounds(start));
    }
    if !grid.in_bounds(goal) {
        return Err(Error::OutOfBounds(goal));
    }
    if occ::is_occupied(grid[start]) {
        return Err(Error::StartOccupied(start));
    }
    if !unknown.passable(grid[goal]) && start != goal {
        return Ok(None);
    }

    let n = grid.len();
    let mut g = vec![u32::MAX; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    let (s, t) = (grid.index_of(start), grid.index_of(goal));
    g[s] = 0;
    // (f, h, insertion order, index): ties prefer the node closer to the goal,
    // then the earliest inserted, so results are deterministic.
    let mut seq = 0u64;
    heap.push(Reverse((start.manhattan(goal) as u32, start.manhattan(goal) as u32, seq, s)));

    while let Some(Reverse((_, _, _, i))) = heap.pop() {
        if closed[i] {
            continue;
        }
        closed[i] = true;
        if i == t {
            let mut cells = vec![grid.cell_of(t)];
            let mut cur = t;
            while cur != s {
                cur = parent[cur];
                cells.push(grid.cell_of(cur));
            }
            cells.reverse();
            return Ok(Some(Path(cells)));
        }
        let cell = grid.cell_of(i);
        for (dr, dc) in NEIGHBORS_4 {
            let Some(nb) = cell.offset(dr, dc).filter(|c| grid.in_bounds(*c)) else {
                continue;
            };
            let j = grid.index_of(nb);
            if closed[j] || !unknown.passable(grid[nb]) {
                continue;
            }
            let ng = g[i] + 1;
            if ng < g[j] {
                g[j] = ng;
                parent[j] = i;
                let h = nb.manhattan(goal) as u32;
                seq += 1;
                heap.push(Reverse((ng + h, h, seq, j)));
            }
        }
    }
    Ok(None)
}

/// Breadth-first geodesic distances (in cells) from `sources` over passable cells.
///
/// Sources get distance 0 regardless of passability.
pub fn distance_field<T>(shape: &Grid<T>, sources: &[Cell], passable: impl Fn(Cell) -> bool) -> Grid<Option<u32>> {
    let (h, w) = shape.shape();
    let mut dist: Grid<Option<u32>> = Grid::filled(h, w, None);
    let mut queue = VecDeque::new();
    for &s in sources {
        if dist.in_bounds(s) && dist[s].is_none() {
            dist[s] = Some(0);
            queue.push_back(s);
        }
    }
    while let Some(cell) = queue.pop_front() {
        let d = dist[cell].expect("queued cells have a distance");
        for (dr, dc) in NEIGHBORS_4 {
            let Some(nb) = cell.offset(dr, dc).filter(|c| dist.in_bounds(*c)) else {
                continue;
            };
            if dist[nb].is_none() && passable(nb) {
                dist[nb] = Some(d + 1);
                queue.push_back(nb);
            }
        }
    }
    dist
}

/// Exact geodesic distance in cells between two free interior cells on ground truth.
pub fn shortest_path_oracle(scene: &Scene, a: Cell, b: Cell) -> Result<u32> {
    for c in [a, b] {
        if !scene.in_bounds(c) {
            return Err(Error::OutOfBounds(c));
        }
        if !scene.is_interior_free(c) {
            return Err(Error::InvalidArgument(format!(
                "cell ({}, {}) is not a free interior cell",
                c.row, c.col
            )));
        }
    }
    let dist = distance_field(&scene.occupancy, &[a], |c| scene.is_free(c));
    dist[b].ok_or(Error::Unreachable { from: a, to: b })
}

/// Index into N, E, S, W of the 4-neighbour closest to `heading`.
pub fn heading_direction(heading: f64) -> usize {
    (((normalize_heading(heading) + 45.0) / 90.0).floor() as usize) % 4
}

/// Heading in degrees pointing from `from` to the 4-adjacent `to`.
pub fn direction_heading(from: Cell, to: Cell) -> Option<f64> {
    match (to.row as isize - from.row as isize, to.col as isize - from.col as isize) {
        (-1, 0) => Some(0.0),
        (0, 1) => Some(90.0),
        (1, 0) => Some(180.0),
        (0, -1) => Some(270.0),
        _ => None,
    }
}

/// Applies one action. Forward moves are blocked by occupied or out-of-bounds cells.
pub fn step_kinematics(truth: &Grid<f32>, state: &AgentState, action: Action, turn_angle: f64) -> AgentState {
    match action {
        Action::TurnLeft => AgentState::new(state.cell, state.heading - turn_angle),
        Action::TurnRight => AgentState::new(state.cell, state.heading + turn_angle),
        Action::MoveForward => {
            let (dr, dc) = NEIGHBORS_4[heading_direction(state.heading)];
            match state.cell.offset(dr, dc) {
                Some(next) if truth.get(next).is_some_and(|&v| occ::is_free(v)) => AgentState {
                    cell: next,
                    heading: state.heading,
                },
                _ => *state,
            }
        }
        Action::LookUp | Action::LookDown | Action::Stop => *state,
    }
}

/// Signed smallest rotation from `from` to `to`, in `(-180, 180]`.
fn heading_delta(from: f64, to: f64) -> f64 {
    let d = (to - from).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Next action to track `path`, or `None` when the agent is not on it (replan).
///
/// Turns toward the next cell while misaligned by more than half a turn
/// increment, then moves; `Stop` at the end of the path.
pub fn follow_path(state: &AgentState, path: &Path, turn_angle: f64) -> Option<Action> {
    let i = path.position_of(state.cell)?;
    let Some(&next) = path.0.get(i + 1) else {
        return Some(Action::Stop);
    };
    let desired = direction_heading(state.cell, next)?;
    let delta = heading_delta(state.heading, desired);
    let desired_dir = heading_direction(desired);
    if delta.abs() <= turn_angle / 2.0 + 1e-9 && heading_direction(state.heading) == desired_dir {
        Some(Action::MoveForward)
    } else if delta > 0.0 {
        Some(Action::TurnRight)
    } else {
        Some(Action::TurnLeft)
    }
}
