//! Partial-map training pairs from simulated waypoint walks.
//!
//! Dataset layout, one directory per pair:
//!
//! ```text
//! observed.f32   H·W·(D+1) little-endian f32: semantics masked to observed cells, then occupancy
//! target.f32     H·W·(D+2) little-endian f32: semantics, occupancy, interior
//! meta.json      scene_id, seed, step, H, W, D
//! ```

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{occ, Cell, Grid};
use crate::planner::{astar, step_kinematics, UnknownPolicy};
use crate::scene::io::{f32_to_le_bytes, le_bytes_to_f32};
use crate::scene::{sample_waypoints, Scene};
use crate::sensor::{
    apply_exterior_mask_in_place, raycast_fov, update_predicted_map_in_place, AgentState, PredictedMap, SensorConfig,
};
use crate::strategies::{PointNavAgent, PointNavController};

pub const OBSERVED_FILE: &str = "observed.f32";
pub const TARGET_FILE: &str = "target.f32";
pub const PAIR_META_FILE: &str = "meta.json";

/// Hard cap on simulated steps per run.
pub const MAX_TRAINING_STEPS: usize = 3000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairMeta {
    pub scene_id: String,
    pub seed: u64,
    pub step: usize,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    #[serde(rename = "D")]
    pub dim: usize,
}

/// Observed map `M` and full target `G` for one snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub meta: PairMeta,
    /// `H·W·(D+1)`.
    pub observed: Vec<f32>,
    /// `H·W·(D+2)`.
    pub target: Vec<f32>,
}

impl TrainingPair {
    /// Sizes match, unknown cells carry zero semantics, and probabilities are
    /// valid.
    pub fn validate(&self) -> Result<()> {
        let (h, w, d) = (self.meta.height, self.meta.width, self.meta.dim);
        if self.observed.len() != h * w * (d + 1) || self.target.len() != h * w * (d + 2) {
            return Err(Error::Dimension(format!(
                "pair {}@{}: observed {} / target {} values for {h}x{w}x{d}",
                self.meta.scene_id,
                self.meta.step,
                self.observed.len(),
                self.target.len()
            )));
        }
        for (k, cell) in self.observed.chunks_exact(d + 1).enumerate() {
            let o = cell[d];
            if o != occ::FREE && o != occ::UNKNOWN && o != occ::OCCUPIED {
                return Err(Error::InvalidArgument(format!("cell {k}: occupancy {o}")));
            }
            if occ::is_unknown(o) && cell[..d].iter().any(|&v| v != 0.0) {
                return Err(Error::InvalidArgument(format!("cell {k} is unknown but has semantics")));
            }
        }
        for (k, cell) in self.target.chunks_exact(d + 2).enumerate() {
            if !(0.0..=1.0).contains(&cell[d]) || !(0.0..=1.0).contains(&cell[d + 1]) {
                return Err(Error::InvalidArgument(format!("target cell {k} has invalid probabilities")));
            }
        }
        Ok(())
    }

    /// Occupancy channel of the observed map.
    pub fn observed_occupancy(&self) -> Grid<f32> {
        let d = self.meta.dim;
        Grid::from_vec(
            self.meta.height,
            self.meta.width,
            self.observed.chunks_exact(d + 1).map(|c| c[d]).collect(),
        )
        .expect("validated size")
    }
}

fn target_tensor(scene: &Scene) -> Vec<f32> {
    let d = scene.embedding_dim();
    let mut out = Vec::with_capacity(scene.occupancy.len() * (d + 2));
    for (c, &o) in scene.occupancy.cells() {
        out.extend_from_slice(scene.semantic_at(c));
        out.push(o);
        out.push(scene.interior[c] as f32);
    }
    out
}

fn observed_tensor(scene: &Scene, p: &PredictedMap) -> Vec<f32> {
    let d = scene.embedding_dim();
    let mut out = Vec::with_capacity(p.grid().len() * (d + 1));
    for (c, &o) in p.grid().cells() {
        if occ::is_unknown(o) {
            out.extend(std::iter::repeat_n(0.0, d));
        } else {
            out.extend_from_slice(scene.semantic_at(c));
        }
        out.push(o);
    }
    out
}

/// Walks a seeded agent through FPS waypoints, sensing every step, and turns
/// `snapshots` evenly spaced beliefs into training pairs. The last snapshot
/// is the final belief. Unreachable waypoints are skipped with a warning.
pub fn generate_training_masks(
    scene: &Scene,
    sensor: &SensorConfig,
    n_waypoints: usize,
    snapshots: usize,
    seed: u64,
) -> Result<Vec<TrainingPair>> {
    sensor.validate()?;
    if snapshots == 0 {
        return Err(Error::InvalidArgument("snapshot count must be at least 1".into()));
    }
    let free = scene.interior_free_cells();
    if free.is_empty() {
        return Err(Error::NotEnoughCells { needed: 1, available: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = free[rng.random_range(0..free.len())];
    let heading = rng.random_range(0..(360.0 / sensor.turn_angle).floor() as usize) as f64 * sensor.turn_angle;
    let mut state = AgentState::new(start, heading);
    let waypoints = sample_waypoints(scene, n_waypoints, seed.wrapping_add(1))?;
    let mut queue: VecDeque<Cell> = VecDeque::new();
    let mut p = PredictedMap::unknown(scene.height(), scene.width());
    let mut history = Vec::new();
    let mut ctl = PointNavController::new(PointNavAgent::Vanilla);
    let episode = format!("{}#{seed}", scene.id);

    let sense = |state: &AgentState, p: &mut PredictedMap| -> Result<()> {
        let o = raycast_fov(scene, state, sensor);
        update_predicted_map_in_place(p, &o, &scene.occupancy)?;
        apply_exterior_mask_in_place(p, &scene.interior)
    };
    sense(&state, &mut p)?;
    history.push(p.clone());
    let mut pending = waypoints.into_iter();
    while history.len() <= MAX_TRAINING_STEPS {
        if queue.is_empty() {
            match pending.next() {
                Some(w) => queue.push_back(w),
                None => break,
            }
        }
        let target = queue[0];
        // Skip targets the belief already rules out.
        if astar(p.grid(), state.cell, target, UnknownPolicy::Traversable)?.is_none() {
            log::warn!("episode {episode}: waypoint {target:?} unreachable, skipping");
            queue.clear();
            continue;
        }
        if let Some(a) = ctl.step(scene, &state, &p, &mut queue, sensor.turn_angle, &episode)? {
            state = step_kinematics(&scene.occupancy, &state, a, sensor.turn_angle);
            sense(&state, &mut p)?;
            history.push(p.clone());
        }
    }

    let steps = history.len() - 1;
    let target = target_tensor(scene);
    let mut pairs = Vec::with_capacity(snapshots);
    for k in 1..=snapshots {
        let t = (k * steps + snapshots / 2) / snapshots;
        let snap = &history[t];
        pairs.push(TrainingPair {
            meta: PairMeta {
                scene_id: scene.id.clone(),
                seed,
                step: t,
                height: scene.height(),
                width: scene.width(),
                dim: scene.embedding_dim(),
            },
            observed: observed_tensor(scene, snap),
            target: target.clone(),
        });
    }
    Ok(pairs)
}

pub fn save_pair(pair: &TrainingPair, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta_path = dir.join(PAIR_META_FILE);
    let json = serde_json::to_vec_pretty(&pair.meta).map_err(|e| Error::json(&meta_path, e))?;
    fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;
    for (name, data) in [(OBSERVED_FILE, &pair.observed), (TARGET_FILE, &pair.target)] {
        let path = dir.join(name);
        fs::write(&path, f32_to_le_bytes(data)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn load_pair(dir: impl AsRef<Path>) -> Result<TrainingPair> {
    let dir = dir.as_ref();
    let meta_path = dir.join(PAIR_META_FILE);
    let raw = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: PairMeta =
        serde_json::from_slice(&raw).map_err(|e| Error::SceneFormat(format!("{}: {e}", meta_path.display())))?;
    let cells = meta.height * meta.width;
    let read = |name: &str, channels: usize| -> Result<Vec<f32>> {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let expected = cells * channels * 4;
        if bytes.len() != expected {
            return Err(Error::PayloadSize {
                file: path.display().to_string(),
                expected,
                actual: bytes.len(),
            });
        }
        Ok(le_bytes_to_f32(&bytes))
    };
    let observed = read(OBSERVED_FILE, meta.dim + 1)?;
    let target = read(TARGET_FILE, meta.dim + 2)?;
    let pair = TrainingPair { meta, observed, target };
    pair.validate()?;
    Ok(pair)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::tests_support::open_room;
    use crate::scene::{generate_synthetic_scene, GeneratorConfig};

    #[test]
    fn full_visibility_leaves_no_unknown_interior() {
        let s = open_room(12, 12);
        let sensor = SensorConfig::new(360.0, 20.0, 30.0);
        let pairs = generate_training_masks(&s, &sensor, 1, 1, 0).unwrap();
        let occ_grid = pairs[0].observed_occupancy();
        for (c, &v) in occ_grid.cells() {
            if s.is_interior(c) {
                assert_ne!(v, 0.5, "{c:?}");
            }
        }
    }

    #[test]
    fn snapshots_are_monotone_sound_and_deterministic() {
        let s = generate_synthetic_scene(4, &GeneratorConfig::default()).unwrap();
        let sensor = SensorConfig::default();
        let pairs = generate_training_masks(&s, &sensor, 3, 4, 9).unwrap();
        assert_eq!(pairs.len(), 4);
        for w in pairs.windows(2) {
            assert!(w[0].meta.step <= w[1].meta.step);
            let (a, b) = (w[0].observed_occupancy(), w[1].observed_occupancy());
            for (c, &v) in a.cells() {
                if v != 0.5 {
                    assert_ne!(b[c], 0.5);
                }
            }
        }
        for p in &pairs {
            p.validate().unwrap();
            for (c, &v) in p.observed_occupancy().cells() {
                if v != 0.5 && s.is_interior(c) {
                    assert_eq!(v, s.occupancy[c]);
                }
            }
        }
        assert_eq!(pairs, generate_training_masks(&s, &sensor, 3, 4, 9).unwrap());
    }

    #[test]
    fn pairs_round_trip_on_disk() {
        let s = generate_synthetic_scene(1, &GeneratorConfig::default()).unwrap();
        let pair = generate_training_masks(&s, &SensorConfig::default(), 1, 1, 2).unwrap().remove(0);
        let dir = tempfile::tempdir().unwrap();
        save_pair(&pair, dir.path()).unwrap();
        assert_eq!(load_pair(dir.path()).unwrap(), pair);
        let obs = dir.path().join(OBSERVED_FILE);
        let mut bytes = fs::read(&obs).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&obs, bytes).unwrap();
        assert!(matches!(load_pair(dir.path()), Err(Error::PayloadSize { .. })));
    }
}
