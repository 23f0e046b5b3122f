//! Simulated field-of-view depth sensing and the predicted-map update.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Error, Result};
use crate::grid::{occ, Cell, Grid};
use crate::scene::Scene;

/// Agent pose in the grid world. Heading is in degrees, 0 = north, 90 = east.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub cell: Cell,
    pub heading: f64,
}

impl AgentState {
    pub fn new(cell: Cell, heading: f64) -> Self {
        Self {
            cell,
            heading: normalize_heading(heading),
        }
    }

    /// Checks the pose is in bounds and on a free ground-truth cell.
    pub fn validate(&self, scene: &Scene) -> Result<()> {
        if !scene.in_bounds(self.cell) {
            return Err(Error::OutOfBounds(self.cell));
        }
        if !scene.is_free(self.cell) {
            return Err(Error::StartOccupied(self.cell));
        }
        Ok(())
    }
}

/// Wraps an angle into `[0, 360)`.
pub fn normalize_heading(deg: f64) -> f64 {
    let h = deg.rem_euclid(360.0);
    if h >= 360.0 {
        0.0
    } else {
        h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    /// Field of view in degrees, `(0, 360]`.
    pub fov: f64,
    /// Sensor range in cells.
    pub range: f64,
    /// Turn increment in degrees.
    pub turn_angle: f64,
    pub ray_count: usize,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            fov: 90.0,
            range: 12.0,
            turn_angle: 30.0,
            ray_count: 180,
        }
    }
}

impl SensorConfig {
    /// Config with the default two rays per degree.
    pub fn new(fov: f64, range: f64, turn_angle: f64) -> Self {
        Self {
            fov,
            range,
            turn_angle,
            ray_count: (2.0 * fov).ceil() as usize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov > 0.0 && self.fov <= 360.0) {
            return Err(Error::InvalidArgument(format!("fov must be in (0, 360], got {}", self.fov)));
        }
        if !(self.range >= 1.0 && self.range.is_finite()) {
            return Err(Error::InvalidArgument(format!("range must be >= 1 cell, got {}", self.range)));
        }
        if (self.ray_count as f64) < self.fov {
            return Err(Error::InvalidArgument(format!(
                "ray_count {} is below one ray per degree of fov {}",
                self.ray_count, self.fov
            )));
        }
        if !(self.turn_angle > 0.0 && self.turn_angle <= 180.0) {
            return Err(Error::InvalidArgument(format!(
                "turn_angle must be in (0, 180], got {}",
                self.turn_angle
            )));
        }
        Ok(())
    }
}

/// The agent's occupancy belief over {0 free, 0.5 unknown, 1 occupied}.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedMap(pub Grid<f32>);

impl PredictedMap {
    pub fn unknown(height: usize, width: usize) -> Self {
        Self(Grid::filled(height, width, occ::UNKNOWN))
    }

    pub fn grid(&self) -> &Grid<f32> {
        &self.0
    }

    pub fn is_known(&self, cell: Cell) -> bool {
        self.0.get(cell).is_some_and(|&v| !occ::is_unknown(v))
    }

    pub fn known_count(&self) -> usize {
        self.0.iter().filter(|&&v| !occ::is_unknown(v)).count()
    }
}

/// Cells observed at one timestep.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObservationMask(pub Grid<bool>);

impl ObservationMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self(Grid::filled(height, width, false))
    }

    pub fn grid(&self) -> &Grid<bool> {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &ObservationMask) -> bool {
        self.0.same_shape(&other.0) && self.0.iter().zip(other.0.iter()).all(|(&a, &b)| !a || b)
    }
}

/// Integer line traversal from `a` to `b`, both included.
pub fn line_cells(a: (isize, isize), b: (isize, isize)) -> Vec<(isize, isize)> {
    let (mut r, mut c) = a;
    let dr = (b.0 - a.0).abs();
    let dc = -(b.1 - a.1).abs();
    let sr = if a.0 < b.0 { 1 } else { -1 };
    let sc = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dr + dc;
    let mut out = Vec::with_capacity((dr - dc + 1) as usize);
    loop {
        out.push((r, c));
        if (r, c) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dc {
            err += dc;
            r += sr;
        }
        if e2 <= dr {
            err += dr;
            c += sc;
        }
    }
    out
}

/// Casts `ray_count` rays across the field of view.
///
/// Each ray walks an integer line from the agent cell, marking cells observed
/// until it leaves the grid, exceeds `range`, or hits an occupied cell (which
/// is itself observed). The agent cell is always observed.
pub fn raycast_fov(scene: &Scene, state: &AgentState, config: &SensorConfig) -> ObservationMask {
    raycast_grid(&scene.occupancy, state, config)
}

/// [`raycast_fov`] against an arbitrary ground-truth occupancy grid.
pub fn raycast_grid(truth: &Grid<f32>, state: &AgentState, config: &SensorConfig) -> ObservationMask {
    let (h, w) = truth.shape();
    let mut mask = ObservationMask::empty(h, w);
    if !truth.in_bounds(state.cell) {
        return mask;
    }
    mask.0[state.cell] = true;
    let origin = (state.cell.row as isize, state.cell.col as isize);
    let range2 = config.range * config.range + 1e-9;
    let n = config.ray_count.max(1);
    let full = config.fov >= 360.0;
    for k in 0..n {
        let angle = if full {
            state.heading + k as f64 * 360.0 / n as f64
        } else if n == 1 {
            state.heading
        } else {
            state.heading - config.fov / 2.0 + k as f64 * config.fov / (n - 1) as f64
        };
        let rad = angle.to_radians();
        let end = (
            (origin.0 as f64 - config.range * rad.cos()).round() as isize,
            (origin.1 as f64 + config.range * rad.sin()).round() as isize,
        );
        for (r, c) in line_cells(origin, end).into_iter().skip(1) {
            if !truth.contains(r, c) {
                break;
            }
            let (dr, dc) = ((r - origin.0) as f64, (c - origin.1) as f64);
            if dr * dr + dc * dc > range2 {
                break;
            }
            let cell = Cell::new(r as usize, c as usize);
            mask.0[cell] = true;
            if occ::is_occupied(truth[cell]) {
                break;
            }
        }
    }
    mask
}

/// `P' = P ⊙ (1 − O) + C ⊙ O`.
pub fn update_predicted_map(p: &PredictedMap, o: &ObservationMask, scene: &Scene) -> Result<PredictedMap> {
    let mut out = p.clone();
    update_predicted_map_in_place(&mut out, o, &scene.occupancy)?;
    Ok(out)
}

pub fn update_predicted_map_in_place(p: &mut PredictedMap, o: &ObservationMask, truth: &Grid<f32>) -> Result<()> {
    ensure_shape(&p.0, &o.0)?;
    ensure_shape(&p.0, truth)?;
    for ((v, &seen), &c) in p.0.as_mut_slice().iter_mut().zip(o.0.iter()).zip(truth.iter()) {
        if seen {
            *v = c;
        }
    }
    Ok(())
}

/// `P' = P ⊙ E + 0.5 · (1 − E)`: exterior cells are forced back to unknown.
pub fn apply_exterior_mask(p: &PredictedMap, interior: &Grid<u8>) -> Result<PredictedMap> {
    let mut out = p.clone();
    apply_exterior_mask_in_place(&mut out, interior)?;
    Ok(out)
}

pub fn apply_exterior_mask_in_place(p: &mut PredictedMap, interior: &Grid<u8>) -> Result<()> {
    ensure_shape(&p.0, interior)?;
    for (v, &e) in p.0.as_mut_slice().iter_mut().zip(interior.iter()) {
        if e == 0 {
            *v = occ::UNKNOWN;
        }
    }
    Ok(())
}

/// Intersection-over-union of two masks; 1.0 when both are empty.
pub fn fov_overlap(a: &ObservationMask, b: &ObservationMask) -> Result<f64> {
    ensure_shape(&a.0, &b.0)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.0.iter().zip(b.0.iter()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}
