//! The immutable world: ground-truth occupancy, interior mask, semantics and objects.

mod generate;
pub mod io;

pub use generate::{generate_synthetic_scene, GeneratorConfig};
pub use io::{load_scene, save_scene, SceneMeta};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geosem::embedding::{EmbeddingKind, SyntheticProvider};
use crate::grid::{occ, Cell, Grid};
use crate::planner::distance_field;

/// One placed object.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub category: String,
    pub footprint: Vec<Cell>,
    pub centroid: Cell,
}

impl ObjectInstance {
    /// Builds an instance whose centroid is the footprint cell closest to the mean.
    pub fn from_footprint(category: impl Into<String>, footprint: Vec<Cell>) -> Self {
        let centroid = nearest_to_mean(&footprint);
        Self {
            category: category.into(),
            footprint,
            centroid,
        }
    }
}

/// Member of `cells` nearest to their arithmetic mean (first on ties).
pub(crate) fn nearest_to_mean(cells: &[Cell]) -> Cell {
    let n = cells.len().max(1) as f64;
    let mr = cells.iter().map(|c| c.row as f64).sum::<f64>() / n;
    let mc = cells.iter().map(|c| c.col as f64).sum::<f64>() / n;
    let mut best = cells.first().copied().unwrap_or_default();
    let mut best_d = f64::INFINITY;
    for &c in cells {
        let d = (c.row as f64 - mr).powi(2) + (c.col as f64 - mc).powi(2);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: String,
    /// Meters per cell.
    pub resolution: f64,
    pub seed: u64,
    /// Object category vocabulary (excluding the structural floor/wall labels).
    pub categories: Vec<String>,
    pub embedding: EmbeddingKind,
    /// Ground-truth occupancy over {0 free, 1 occupied}.
    pub occupancy: Grid<f32>,
    /// Interior mask over {0 exterior, 1 interior}.
    pub interior: Grid<u8>,
    embedding_dim: usize,
    /// `H·W·D`, channel-last.
    semantic: Vec<f32>,
    pub objects: Vec<ObjectInstance>,
}

impl Scene {
    /// Assembles a scene and checks every invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: String,
        resolution: f64,
        seed: u64,
        categories: Vec<String>,
        embedding: EmbeddingKind,
        occupancy: Grid<f32>,
        interior: Grid<u8>,
        embedding_dim: usize,
        semantic: Vec<f32>,
        objects: Vec<ObjectInstance>,
    ) -> Result<Self> {
        let scene = Self::new_unchecked(
            id,
            resolution,
            seed,
            categories,
            embedding,
            occupancy,
            interior,
            embedding_dim,
            semantic,
            objects,
        );
        scene.validate()?;
        Ok(scene)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new_unchecked(
        id: String,
        resolution: f64,
        seed: u64,
        categories: Vec<String>,
        embedding: EmbeddingKind,
        occupancy: Grid<f32>,
        interior: Grid<u8>,
        embedding_dim: usize,
        semantic: Vec<f32>,
        objects: Vec<ObjectInstance>,
    ) -> Self {
        Self {
            id,
            resolution,
            seed,
            categories,
            embedding,
            occupancy,
            interior,
            embedding_dim,
            semantic,
            objects,
        }
    }

    pub fn height(&self) -> usize {
        self.occupancy.height()
    }

    pub fn width(&self) -> usize {
        self.occupancy.width()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.occupancy.shape()
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn semantic(&self) -> &[f32] {
        &self.semantic
    }

    pub fn semantic_at(&self, cell: Cell) -> &[f32] {
        let i = self.occupancy.index_of(cell) * self.embedding_dim;
        &self.semantic[i..i + self.embedding_dim]
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        self.occupancy.in_bounds(cell)
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        self.occupancy.get(cell).is_some_and(|&v| occ::is_free(v))
    }

    pub fn is_interior(&self, cell: Cell) -> bool {
        self.interior.get(cell).is_some_and(|&v| v == 1)
    }

    pub fn is_interior_free(&self, cell: Cell) -> bool {
        self.is_free(cell) && self.is_interior(cell)
    }

    pub fn interior_free_cells(&self) -> Vec<Cell> {
        self.occupancy
            .cells()
            .map(|(c, _)| c)
            .filter(|&c| self.is_interior_free(c))
            .collect()
    }

    /// The provider whose label embeddings this scene's semantics were written with.
    pub fn provider(&self) -> Result<SyntheticProvider> {
        SyntheticProvider::for_categories(self.embedding_dim, self.embedding, &self.categories)
    }

    pub fn instances_of<'a>(&'a self, category: &'a str) -> impl Iterator<Item = &'a ObjectInstance> + 'a {
        self.objects.iter().filter(move |o| o.category == category)
    }

    /// Categories with at least one instance, in vocabulary order.
    pub fn present_categories(&self) -> Vec<String> {
        self.categories
            .iter()
            .filter(|c| self.objects.iter().any(|o| &o.category == *c))
            .cloned()
            .collect()
    }

    /// Checks the full invariant list.
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.shape();
        let bad = |msg: String| Err(Error::InvalidScene(msg));
        if h == 0 || w == 0 {
            return bad("empty grid".into());
        }
        if !(self.resolution.is_finite() && self.resolution > 0.0) {
            return bad(format!("resolution must be positive, got {}", self.resolution));
        }
        if self.interior.shape() != (h, w) {
            return bad("interior mask shape differs from occupancy".into());
        }
        if self.embedding_dim == 0 || self.semantic.len() != h * w * self.embedding_dim {
            return bad("semantic grid size does not match H·W·D".into());
        }
        for (cell, &v) in self.occupancy.cells() {
            if v != occ::FREE && v != occ::OCCUPIED {
                return bad(format!("occupancy at {cell:?} is {v}, expected 0 or 1"));
            }
            let e = self.interior[cell];
            if e > 1 {
                return bad(format!("interior mask at {cell:?} is {e}"));
            }
            if v == occ::OCCUPIED && e == 0 && !self.interior.neighbors8(cell).any(|n| self.interior[n] == 1) {
                return bad(format!("occupied cell {cell:?} is outside the interior and its boundary ring"));
            }
            if e == 0 && self.semantic_at(cell).iter().any(|&x| x != 0.0) {
                return bad(format!("exterior cell {cell:?} has a non-zero semantic vector"));
            }
        }

        let provider = self.provider()?;
        for (k, obj) in self.objects.iter().enumerate() {
            if obj.footprint.is_empty() {
                return bad(format!("object {k} ({}) has an empty footprint", obj.category));
            }
            let (rmin, rmax) = minmax(obj.footprint.iter().map(|c| c.row));
            let (cmin, cmax) = minmax(obj.footprint.iter().map(|c| c.col));
            if !(rmin..=rmax).contains(&obj.centroid.row) || !(cmin..=cmax).contains(&obj.centroid.col) {
                return bad(format!("object {k} centroid outside its footprint bounding box"));
            }
            let expected = provider.label_embedding(&obj.category);
            for &c in &obj.footprint {
                if !self.is_interior(c) {
                    return bad(format!("object {k} footprint cell {c:?} is not interior"));
                }
                let actual = self.semantic_at(c);
                if actual.iter().zip(&expected).any(|(a, b)| (a - b).abs() > 1e-6) {
                    return bad(format!(
                        "object {k} footprint cell {c:?} does not carry the '{}' embedding",
                        obj.category
                    ));
                }
            }
        }

        let free = self.interior_free_cells();
        let Some(&first) = free.first() else {
            return bad("no free interior cell".into());
        };
        let dist = distance_field(&self.occupancy, &[first], |c| self.is_interior_free(c));
        if let Some(c) = free.iter().find(|&&c| dist[c].is_none()) {
            return bad(format!("free interior cell {c:?} is disconnected from {first:?}"));
        }
        Ok(())
    }
}

fn minmax(it: impl Iterator<Item = usize>) -> (usize, usize) {
    it.fold((usize::MAX, 0), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Samples `n` distinct free interior cells spread over the scene.
///
/// Farthest-point sampling under the geodesic metric: a seeded random anchor
/// picks the first waypoint (the cell farthest from it); each further waypoint
/// maximizes its geodesic distance to those already chosen. Ties go to the
/// lowest row-major index.
pub fn sample_waypoints(scene: &Scene, n: usize, seed: u64) -> Result<Vec<Cell>> {
    if n == 0 {
        return Err(Error::InvalidArgument("waypoint count must be at least 1".into()));
    }
    let free = scene.interior_free_cells();
    if free.len() < n {
        return Err(Error::NotEnoughCells {
            needed: n,
            available: free.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchor = free[rng.random_range(0..free.len())];
    let passable = |c: Cell| scene.is_interior_free(c);

    let mut min_dist: Vec<u32> = {
        let d = distance_field(&scene.occupancy, &[anchor], passable);
        free.iter().map(|&c| d[c].unwrap_or(0)).collect()
    };
    let mut chosen = Vec::with_capacity(n);
    for _ in 0..n {
        // Row-major order of `free` gives the lowest-index tie break.
        let (best, _) = min_dist
            .iter()
            .enumerate()
            .fold((0usize, 0u32), |(bi, bd), (i, &d)| if d > bd { (i, d) } else { (bi, bd) });
        let pick = if chosen.is_empty() || min_dist[best] > 0 {
            free[best]
        } else {
            // Everything left is at distance zero only if it was already chosen.
            match free.iter().find(|c| !chosen.contains(*c)) {
                Some(&c) => c,
                None => break,
            }
        };
        chosen.push(pick);
        let d = distance_field(&scene.occupancy, &[pick], passable);
        for (m, &c) in min_dist.iter_mut().zip(&free) {
            let dc = d[c].unwrap_or(0);
            *m = if chosen.len() == 1 { dc } else { (*m).min(dc) };
        }
    }
    Ok(chosen)
}


#[cfg(test)]
mod tests {
    use super::tests_support::open_room;
    use super::*;

    #[test]
    fn single_waypoint_is_free_interior() {
        let s = open_room(12, 12);
        let w = sample_waypoints(&s, 1, 3).unwrap();
        assert_eq!(w.len(), 1);
        assert!(s.is_interior_free(w[0]));
    }

    #[test]
    fn waypoints_are_deterministic_and_distinct() {
        let s = generate_synthetic_scene(4, &GeneratorConfig::default()).unwrap();
        let a = sample_waypoints(&s, 8, 11).unwrap();
        let b = sample_waypoints(&s, 8, 11).unwrap();
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 8);
    }

    #[test]
    fn too_many_waypoints_is_an_error() {
        let s = open_room(5, 5);
        // 3×3 free interior.
        assert!(matches!(
            sample_waypoints(&s, 10, 0),
            Err(Error::NotEnoughCells { needed: 10, available: 9 })
        ));
        assert_eq!(sample_waypoints(&s, 9, 0).unwrap().len(), 9);
    }

    #[test]
    fn validator_rejects_semantic_outside_interior() {
        let mut s = open_room(8, 8);
        s.interior[Cell::new(3, 3)] = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn validator_rejects_disconnected_free_space() {
        let mut s = open_room(9, 9);
        let cells: Vec<_> = (0..9).map(|r| (r, 4)).collect();
        s.set_wall_for_test(&cells);
        assert!(matches!(s.validate(), Err(Error::InvalidScene(m)) if m.contains("disconnected")));
    }
}
