//! Seeded synthetic floor plans: recursive rectangle partition with door gaps.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ObjectInstance, Scene};
use crate::error::{Error, Result};
use crate::geosem::embedding::{EmbeddingKind, SyntheticProvider};
use crate::grid::{Cell, Grid};

/// Object categories of the default benchmark vocabulary.
pub const DEFAULT_CATEGORIES: [&str; 6] = ["chair", "couch", "potted plant", "bed", "toilet", "tv"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub height: usize,
    pub width: usize,
    pub embedding_dim: usize,
    /// Meters per cell.
    pub resolution: f64,
    pub min_rooms: usize,
    pub max_rooms: usize,
    /// Minimum room side in cells, walls included.
    pub min_room_side: usize,
    pub door_width: usize,
    /// Upper bound on the random empty margin around the building.
    pub max_margin: usize,
    /// Chance of cutting one corner room away, making the footprint L-shaped.
    pub corner_cut_probability: f64,
    /// Chance of a door on each room adjacency beyond the spanning tree.
    pub extra_door_probability: f64,
    pub min_objects_per_room: usize,
    pub max_objects_per_room: usize,
    pub categories: Vec<String>,
    pub embedding: EmbeddingKind,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            height: 48,
            width: 48,
            embedding_dim: 16,
            resolution: 0.25,
            min_rooms: 3,
            max_rooms: 6,
            min_room_side: 9,
            door_width: 2,
            max_margin: 3,
            corner_cut_probability: 0.4,
            extra_door_probability: 0.25,
            min_objects_per_room: 1,
            max_objects_per_room: 2,
            categories: DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect(),
            embedding: EmbeddingKind::Orthonormal,
        }
    }
}

/// Inclusive rectangle; its border cells are the room walls.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Rect {
    r0: usize,
    c0: usize,
    r1: usize,
    c1: usize,
}

impl Rect {
    fn rows(&self) -> usize {
        self.r1 - self.r0 + 1
    }

    fn cols(&self) -> usize {
        self.c1 - self.c0 + 1
    }

    fn area(&self) -> usize {
        self.rows() * self.cols()
    }

    fn contains(&self, c: Cell) -> bool {
        (self.r0..=self.r1).contains(&c.row) && (self.c0..=self.c1).contains(&c.col)
    }

    fn on_border(&self, c: Cell) -> bool {
        self.contains(c) && (c.row == self.r0 || c.row == self.r1 || c.col == self.c0 || c.col == self.c1)
    }
}

/// A wall segment two rooms share; `fixed` is the wall row/col, `lo..=hi` the overlap.
#[derive(Clone, Copy, Debug)]
struct SharedWall {
    a: usize,
    b: usize,
    horizontal: bool,
    fixed: usize,
    lo: usize,
    hi: usize,
}

struct RoomType {
    anchor: &'static str,
    weight: u32,
    extras: &'static [(&'static str, f64)],
}

// Category/room-type correlation gives the semantic layout a learnable prior.
const ROOM_TYPES: [RoomType; 4] = [
    RoomType {
        anchor: "bed",
        weight: 3,
        extras: &[("tv", 0.4), ("chair", 0.3), ("potted plant", 0.2)],
    },
    RoomType {
        anchor: "couch",
        weight: 3,
        extras: &[("tv", 0.6), ("potted plant", 0.5), ("chair", 0.3)],
    },
    RoomType {
        anchor: "toilet",
        weight: 2,
        extras: &[("potted plant", 0.2)],
    },
    RoomType {
        anchor: "chair",
        weight: 2,
        extras: &[("potted plant", 0.4), ("tv", 0.1)],
    },
];

const FOOTPRINTS: [(usize, usize); 3] = [(2, 3), (3, 2), (3, 3)];

/// Generates a scene; bit-identical output for identical `(seed, config)`.
pub fn generate_synthetic_scene(seed: u64, config: &GeneratorConfig) -> Result<Scene> {
    check_config(config)?;
    let provider = SyntheticProvider::for_categories(config.embedding_dim, config.embedding, &config.categories)
        .map_err(|e| Error::Generation(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (config.height, config.width);

    let mut margin = || rng.random_range(0..=config.max_margin);
    let (mt, mb, ml, mr) = (margin(), margin(), margin(), margin());
    let footprint = fit_footprint(h, w, mt, mb, ml, mr, config)?;

    let target_rooms = rng.random_range(config.min_rooms..=config.max_rooms);
    let mut rooms = vec![footprint];
    while rooms.len() < target_rooms {
        let splittable: Vec<usize> = (0..rooms.len())
            .filter(|&i| can_split(&rooms[i], config.min_room_side))
            .collect();
        let Some(&idx) = splittable.iter().max_by_key(|&&i| (rooms[i].area(), usize::MAX - i)) else {
            break;
        };
        let (a, b) = split(&rooms[idx], config.min_room_side, &mut rng);
        rooms[idx] = a;
        rooms.push(b);
    }
    if rooms.len() < config.min_rooms {
        return Err(Error::Generation(format!(
            "only {} rooms of side >= {} fit in a {}x{} footprint, need {}",
            rooms.len(),
            config.min_room_side,
            footprint.rows(),
            footprint.cols(),
            config.min_rooms
        )));
    }

    if rooms.len() >= 3 && rng.random_bool(config.corner_cut_probability.clamp(0.0, 1.0)) {
        let corners: Vec<usize> = (0..rooms.len())
            .filter(|&i| {
                let r = rooms[i];
                (r.r0 == footprint.r0 || r.r1 == footprint.r1) && (r.c0 == footprint.c0 || r.c1 == footprint.c1)
            })
            .collect();
        if let Some(&cut) = corners.get(rng.random_range(0..corners.len().max(1))) {
            let mut rest = rooms.clone();
            rest.remove(cut);
            if rest.len() >= config.min_rooms && rooms_connected(&rest, config.door_width) {
                rooms = rest;
            }
        }
    }

    let walls = shared_walls(&rooms, config.door_width);
    let door_walls = choose_doors(rooms.len(), &walls, config.extra_door_probability, &mut rng);

    let mut occupancy = Grid::filled(h, w, 0.0f32);
    let mut interior = Grid::filled(h, w, 0u8);
    for room in &rooms {
        for r in room.r0..=room.r1 {
            for c in room.c0..=room.c1 {
                let cell = Cell::new(r, c);
                interior[cell] = 1;
                if room.on_border(cell) {
                    occupancy[cell] = 1.0;
                }
            }
        }
    }
    for wall in door_walls.iter().map(|&i| walls[i]) {
        let start = rng.random_range(wall.lo + 1..=wall.hi - config.door_width);
        for k in start..start + config.door_width {
            let cell = if wall.horizontal {
                Cell::new(wall.fixed, k)
            } else {
                Cell::new(k, wall.fixed)
            };
            occupancy[cell] = 0.0;
        }
    }

    let objects = place_objects(&rooms, config, &mut rng);

    let d = config.embedding_dim;
    let floor = provider.label_embedding("floor");
    let wall = provider.label_embedding("wall");
    let mut semantic = vec![0.0f32; h * w * d];
    for (cell, &v) in occupancy.cells() {
        if interior[cell] == 0 {
            continue;
        }
        let i = occupancy.index_of(cell) * d;
        let e = if v == 1.0 { &wall } else { &floor };
        semantic[i..i + d].copy_from_slice(e);
    }
    for obj in &objects {
        let e = provider.label_embedding(&obj.category);
        for &c in &obj.footprint {
            let i = occupancy.index_of(c) * d;
            semantic[i..i + d].copy_from_slice(&e);
        }
    }

    let scene = Scene::new_unchecked(
        format!("synth-{seed:06}"),
        config.resolution,
        seed,
        config.categories.clone(),
        config.embedding,
        occupancy,
        interior,
        d,
        semantic,
        objects,
    );
    scene
        .validate()
        .map_err(|e| Error::Generation(format!("generated scene failed validation: {e}")))?;
    Ok(scene)
}

fn check_config(config: &GeneratorConfig) -> Result<()> {
    let fail = |m: String| Err(Error::Generation(m));
    if config.min_rooms == 0 || config.min_rooms > config.max_rooms {
        return fail(format!(
            "room count range {}..={} is empty or zero",
            config.min_rooms, config.max_rooms
        ));
    }
    if config.min_room_side < 3 {
        return fail("min_room_side must be at least 3 (walls plus one free cell)".into());
    }
    if config.door_width == 0 || config.door_width + 2 > config.min_room_side {
        return fail(format!(
            "door width {} does not fit rooms of side {}",
            config.door_width, config.min_room_side
        ));
    }
    if config.min_objects_per_room > config.max_objects_per_room {
        return fail("min_objects_per_room exceeds max_objects_per_room".into());
    }
    if !(config.resolution.is_finite() && config.resolution > 0.0) {
        return fail("resolution must be positive".into());
    }
    Ok(())
}

fn fit_footprint(
    h: usize,
    w: usize,
    mt: usize,
    mb: usize,
    ml: usize,
    mr: usize,
    config: &GeneratorConfig,
) -> Result<Rect> {
    let side = config.min_room_side;
    if h < side || w < side {
        return Err(Error::Generation(format!(
            "grid {h}x{w} cannot hold a room of side {side}"
        )));
    }
    // Shrink margins until the footprint holds at least one room.
    let fit = |len: usize, a: usize, b: usize| {
        let (mut a, mut b) = (a, b);
        while len < a + b + side {
            if a >= b && a > 0 {
                a -= 1;
            } else {
                b -= 1;
            }
        }
        (a, len - 1 - b)
    };
    let (r0, r1) = fit(h, mt, mb);
    let (c0, c1) = fit(w, ml, mr);
    Ok(Rect { r0, c0, r1, c1 })
}

fn can_split(r: &Rect, side: usize) -> bool {
    // Two rooms sharing a wall need 2·side − 1 cells along the split axis.
    r.rows() >= 2 * side - 1 || r.cols() >= 2 * side - 1
}

fn split(r: &Rect, side: usize, rng: &mut ChaCha8Rng) -> (Rect, Rect) {
    let rows_ok = r.rows() >= 2 * side - 1;
    let cols_ok = r.cols() >= 2 * side - 1;
    let horizontal = match (rows_ok, cols_ok) {
        (true, false) => true,
        (false, true) => false,
        _ if r.rows() != r.cols() => r.rows() > r.cols(),
        _ => rng.random_bool(0.5),
    };
    if horizontal {
        let at = rng.random_range(r.r0 + side - 1..=r.r1 + 1 - side);
        (Rect { r1: at, ..*r }, Rect { r0: at, ..*r })
    } else {
        let at = rng.random_range(r.c0 + side - 1..=r.c1 + 1 - side);
        (Rect { c1: at, ..*r }, Rect { c0: at, ..*r })
    }
}

fn shared_walls(rooms: &[Rect], door_width: usize) -> Vec<SharedWall> {
    let mut out = Vec::new();
    for a in 0..rooms.len() {
        for b in a + 1..rooms.len() {
            let (ra, rb) = (rooms[a], rooms[b]);
            let candidates = [
                (ra.r1 == rb.r0 || rb.r1 == ra.r0, true),
                (ra.c1 == rb.c0 || rb.c1 == ra.c0, false),
            ];
            for (touch, horizontal) in candidates {
                if !touch {
                    continue;
                }
                let (fixed, lo, hi) = if horizontal {
                    let fixed = if ra.r1 == rb.r0 { ra.r1 } else { ra.r0 };
                    (fixed, ra.c0.max(rb.c0), ra.c1.min(rb.c1))
                } else {
                    let fixed = if ra.c1 == rb.c0 { ra.c1 } else { ra.c0 };
                    (fixed, ra.r0.max(rb.r0), ra.r1.min(rb.r1))
                };
                // Door cells must avoid the segment end points (wall junctions).
                if hi > lo && hi - lo - 1 >= door_width {
                    out.push(SharedWall {
                        a,
                        b,
                        horizontal,
                        fixed,
                        lo,
                        hi,
                    });
                }
            }
        }
    }
    out
}

fn rooms_connected(rooms: &[Rect], door_width: usize) -> bool {
    let walls = shared_walls(rooms, door_width);
    let mut uf = UnionFind::new(rooms.len());
    for w in &walls {
        uf.union(w.a, w.b);
    }
    (1..rooms.len()).all(|i| uf.find(i) == uf.find(0))
}

/// Random spanning tree over room adjacencies plus optional extra doors.
fn choose_doors(n_rooms: usize, walls: &[SharedWall], extra_p: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..walls.len()).collect();
    order.shuffle(rng);
    let mut uf = UnionFind::new(n_rooms);
    let mut doors = Vec::new();
    for &i in &order {
        let w = walls[i];
        if uf.union(w.a, w.b) || rng.random_bool(extra_p.clamp(0.0, 1.0)) {
            doors.push(i);
        }
    }
    doors.sort_unstable();
    doors
}

fn place_objects(rooms: &[Rect], config: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Vec<ObjectInstance> {
    let mut objects: Vec<ObjectInstance> = Vec::new();
    if config.categories.is_empty() || config.max_objects_per_room == 0 {
        return objects;
    }
    let total_weight: u32 = ROOM_TYPES.iter().map(|t| t.weight).sum();
    for room in rooms {
        let mut pick = rng.random_range(0..total_weight);
        let room_type = ROOM_TYPES
            .iter()
            .find(|t| {
                if pick < t.weight {
                    true
                } else {
                    pick -= t.weight;
                    false
                }
            })
            .unwrap_or(&ROOM_TYPES[0]);

        let count = rng.random_range(config.min_objects_per_room..=config.max_objects_per_room);
        let mut wanted: Vec<String> = Vec::with_capacity(count);
        let in_vocab = |c: &str| config.categories.iter().any(|v| v == c);
        if in_vocab(room_type.anchor) {
            wanted.push(room_type.anchor.to_string());
        }
        for &(cat, p) in room_type.extras {
            if wanted.len() >= count {
                break;
            }
            if in_vocab(cat) && rng.random_bool(p) {
                wanted.push(cat.to_string());
            }
        }
        while wanted.len() < count {
            let cat = &config.categories[rng.random_range(0..config.categories.len())];
            wanted.push(cat.clone());
        }
        wanted.truncate(count);

        for category in wanted {
            for _attempt in 0..24 {
                let (fh, fw) = FOOTPRINTS[rng.random_range(0..FOOTPRINTS.len())];
                // One cell of clearance from the walls.
                let (lo_r, hi_r) = (room.r0 + 2, room.r1.saturating_sub(1 + fh));
                let (lo_c, hi_c) = (room.c0 + 2, room.c1.saturating_sub(1 + fw));
                if lo_r > hi_r || lo_c > hi_c {
                    continue;
                }
                let r = rng.random_range(lo_r..=hi_r);
                let c = rng.random_range(lo_c..=hi_c);
                let footprint: Vec<Cell> = (r..r + fh)
                    .flat_map(|rr| (c..c + fw).map(move |cc| Cell::new(rr, cc)))
                    .collect();
                let clear = objects.iter().all(|o| {
                    o.footprint
                        .iter()
                        .all(|p| footprint.iter().all(|q| p.row.abs_diff(q.row) > 1 || p.col.abs_diff(q.col) > 1))
                });
                if clear {
                    objects.push(ObjectInstance::from_footprint(category.clone(), footprint));
                    break;
                }
            }
        }
    }
    objects
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    /// Returns true when the two sets were distinct.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[rb] = ra;
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = GeneratorConfig::default();
        let a = generate_synthetic_scene(7, &cfg).unwrap();
        let b = generate_synthetic_scene(7, &cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_scene(8, &cfg).unwrap();
        assert_ne!(a.occupancy, c.occupancy);
    }

    #[test]
    fn single_room_has_only_boundary_walls() {
        let cfg = GeneratorConfig {
            height: 14,
            width: 12,
            min_rooms: 1,
            max_rooms: 1,
            max_margin: 0,
            min_objects_per_room: 0,
            max_objects_per_room: 0,
            ..GeneratorConfig::default()
        };
        let s = generate_synthetic_scene(3, &cfg).unwrap();
        assert!(s.objects.is_empty());
        for (cell, &v) in s.occupancy.cells() {
            let border = cell.row == 0 || cell.row == 13 || cell.col == 0 || cell.col == 11;
            assert_eq!(v == 1.0, border, "cell {cell:?}");
        }
    }

    #[test]
    fn many_seeds_pass_validation() {
        let cfg = GeneratorConfig::default();
        for seed in 0..100 {
            let s = generate_synthetic_scene(seed, &cfg).unwrap();
            s.validate().unwrap();
            assert!(s.objects.iter().all(|o| o.footprint.iter().all(|&c| s.is_free(c))));
        }
    }

    #[test]
    fn infeasible_config_is_an_error() {
        let cfg = GeneratorConfig {
            height: 20,
            width: 20,
            min_rooms: 8,
            max_rooms: 8,
            ..GeneratorConfig::default()
        };
        assert!(matches!(generate_synthetic_scene(0, &cfg), Err(Error::Generation(_))));
        let tiny = GeneratorConfig {
            height: 5,
            width: 5,
            ..GeneratorConfig::default()
        };
        assert!(generate_synthetic_scene(0, &tiny).is_err());
    }

    #[test]
    fn some_scenes_have_an_exterior() {
        let cfg = GeneratorConfig::default();
        let with_exterior = (0..20)
            .filter(|&s| {
                let scene = generate_synthetic_scene(s, &cfg).unwrap();
                scene.interior.iter().any(|&e| e == 0)
            })
            .count();
        assert!(with_exterior > 10);
    }
}
