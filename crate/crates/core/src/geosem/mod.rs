//! GeoSem maps: a bird's-eye grid of averaged semantic embeddings plus an
//! occupancy channel, built from posed observations.

pub mod camera;
pub mod embedding;
pub mod panorama;

use nalgebra::Point3;

use crate::error::{ensure_shape, Error, Result};
use crate::grid::{occ, Cell, Grid};

pub use embedding::{EmbeddingProvider, SyntheticProvider};

/// Valid height range for occupancy, as fractions of the scene height.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HeightBand {
    pub z_min: f64,
    pub z_max: f64,
    /// Scene height in meters; the floor is at z = 0.
    pub scene_height: f64,
}

impl HeightBand {
    pub fn new(z_min: f64, z_max: f64, scene_height: f64) -> Result<Self> {
        if !(z_min < z_max) {
            return Err(Error::InvalidArgument(format!("z_min {z_min} must be below z_max {z_max}")));
        }
        Ok(Self {
            z_min,
            z_max,
            scene_height,
        })
    }

    /// Drone-height band: 30 % to 70 % of the scene height.
    pub fn drone(scene_height: f64) -> Self {
        Self {
            z_min: 0.3,
            z_max: 0.7,
            scene_height,
        }
    }

    pub fn contains(&self, z: f64) -> bool {
        z >= self.z_min * self.scene_height && z <= self.z_max * self.scene_height
    }
}

/// Occupancy threshold relative to the densest cell (strictly exceeded).
pub const DENSITY_FRACTION: f64 = 0.10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IntegrateStats {
    pub binned: usize,
    pub dropped: usize,
}

/// `H × W × (D+1)` observed map with its density counter.
#[derive(Clone, Debug, PartialEq)]
pub struct GeoSemMap {
    height: usize,
    width: usize,
    dim: usize,
    /// Running per-cell mean, `H·W·D`.
    semantic: Vec<f64>,
    pub occupancy: Grid<f32>,
    density: Grid<u32>,
    /// Meters per cell.
    pub resolution: f64,
    /// World `(x, y)` of the corner of cell (0, 0).
    pub origin: (f64, f64),
    dropped: u64,
}

impl GeoSemMap {
    pub fn new(height: usize, width: usize, dim: usize, resolution: f64, origin: (f64, f64)) -> Self {
        Self {
            height,
            width,
            dim,
            semantic: vec![0.0; height * width * dim],
            occupancy: Grid::filled(height, width, occ::UNKNOWN),
            density: Grid::filled(height, width, 0),
            resolution,
            origin,
            dropped: 0,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn density(&self) -> &Grid<u32> {
        &self.density
    }

    /// Points dropped so far because they fell outside the grid.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn semantic_at(&self, cell: Cell) -> &[f64] {
        let i = (cell.row * self.width + cell.col) * self.dim;
        &self.semantic[i..i + self.dim]
    }

    pub fn semantic_at_f32(&self, cell: Cell) -> Vec<f32> {
        self.semantic_at(cell).iter().map(|&x| x as f32).collect()
    }

    pub fn is_observed(&self, cell: Cell) -> bool {
        self.density.get(cell).is_some_and(|&n| n > 0)
    }

    /// Cell containing world point `(x, y)`, if inside the grid.
    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<Cell> {
        let col = ((x - self.origin.0) / self.resolution).floor();
        let row = ((y - self.origin.1) / self.resolution).floor();
        if col < 0.0 || row < 0.0 || !col.is_finite() || !row.is_finite() {
            return None;
        }
        let cell = Cell::new(row as usize, col as usize);
        (cell.row < self.height && cell.col < self.width).then_some(cell)
    }

    /// Folds one embedding into a cell's running mean.
    pub fn integrate_cell(&mut self, cell: Cell, embedding: &[f32]) -> Result<()> {
        if embedding.len() != self.dim {
            return Err(Error::Dimension(format!(
                "embedding has {} values, map expects {}",
                embedding.len(),
                self.dim
            )));
        }
        if !self.density.in_bounds(cell) {
            return Err(Error::OutOfBounds(cell));
        }
        let n = {
            let n = &mut self.density[cell];
            *n += 1;
            *n as f64
        };
        let i = (cell.row * self.width + cell.col) * self.dim;
        for (m, &v) in self.semantic[i..i + self.dim].iter_mut().zip(embedding) {
            *m += (v as f64 - *m) / n;
        }
        Ok(())
    }

    /// Bins world points into cells and updates the running means.
    ///
    /// Out-of-grid points are dropped and counted, never fatal.
    pub fn integrate_points<'a>(
        &mut self,
        points: impl IntoIterator<Item = (Point3<f64>, &'a [f32])>,
    ) -> Result<IntegrateStats> {
        let mut stats = IntegrateStats::default();
        for (p, e) in points {
            match self.world_to_cell(p.x, p.y) {
                Some(cell) => {
                    self.integrate_cell(cell, e)?;
                    stats.binned += 1;
                }
                None => {
                    self.dropped += 1;
                    stats.dropped += 1;
                }
            }
        }
        Ok(stats)
    }

    /// Density of points inside the height band.
    pub fn filtered_density(&self, points: &[Point3<f64>], band: &HeightBand) -> Grid<u32> {
        let mut out = Grid::filled(self.height, self.width, 0u32);
        for p in points.iter().filter(|p| band.contains(p.z)) {
            if let Some(cell) = self.world_to_cell(p.x, p.y) {
                out[cell] += 1;
            }
        }
        out
    }

    /// Serializes as `H·W·(D+1)` f32, channel-last: semantics then occupancy.
    pub fn to_tensor(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.height * self.width * (self.dim + 1));
        for (k, &o) in self.occupancy.iter().enumerate() {
            out.extend(self.semantic[k * self.dim..(k + 1) * self.dim].iter().map(|&x| x as f32));
            out.push(o);
        }
        out
    }

    /// Rebuilds a map from an `H·W·(D+1)` tensor. Cells with a non-zero
    /// semantic vector get density 1.
    pub fn from_tensor(height: usize, width: usize, dim: usize, data: &[f32], resolution: f64) -> Result<Self> {
        if data.len() != height * width * (dim + 1) {
            return Err(Error::Dimension(format!(
                "tensor has {} values, expected {}x{}x{}",
                data.len(),
                height,
                width,
                dim + 1
            )));
        }
        let mut map = Self::new(height, width, dim, resolution, (0.0, 0.0));
        for k in 0..height * width {
            let cell = &data[k * (dim + 1)..(k + 1) * (dim + 1)];
            map.occupancy.as_mut_slice()[k] = cell[dim];
            if cell[..dim].iter().any(|&x| x != 0.0) {
                map.density.as_mut_slice()[k] = 1;
                for (m, &v) in map.semantic[k * dim..(k + 1) * dim].iter_mut().zip(&cell[..dim]) {
                    *m = v as f64;
                }
            }
        }
        Ok(map)
    }
}

/// Occupancy from density: occupied iff the filtered density strictly exceeds
/// 10 % of its maximum; cells holding any point but not occupied are free;
/// cells with no points stay unknown.
pub fn occupancy_from_density(filtered: &Grid<u32>, density: &Grid<u32>) -> Result<Grid<f32>> {
    ensure_shape(filtered, density)?;
    let max = filtered.iter().copied().max().unwrap_or(0) as f64;
    let threshold = DENSITY_FRACTION * max;
    Ok(Grid::from_fn(filtered.height(), filtered.width(), |c| {
        let f = filtered[c];
        if f > 0 && f as f64 > threshold {
            occ::OCCUPIED
        } else if density[c] > 0 || f > 0 {
            occ::FREE
        } else {
            occ::UNKNOWN
        }
    }))
}

/// Per-cell argmax over query similarities.
#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    pub queries: Vec<String>,
    /// Index into `queries`; `None` for unobserved cells.
    pub labels: Grid<Option<usize>>,
}

impl Segmentation {
    pub fn label_at(&self, cell: Cell) -> Option<&str> {
        self.labels[cell].map(|i| self.queries[i].as_str())
    }
}

/// Labels each observed cell with the query of highest dot-product score.
pub fn zero_shot_segment(map: &GeoSemMap, queries: &[String], provider: &dyn EmbeddingProvider) -> Result<Segmentation> {
    if queries.is_empty() {
        return Err(Error::InvalidArgument("at least one query is required".into()));
    }
    let embeddings = queries
        .iter()
        .map(|q| provider.embed_text(q))
        .collect::<Result<Vec<_>>>()?;
    if let Some(e) = embeddings.iter().find(|e| e.len() != map.dim()) {
        return Err(Error::Dimension(format!(
            "provider returned {} values, map has D = {}",
            e.len(),
            map.dim()
        )));
    }
    let (h, w) = map.shape();
    let labels = Grid::from_fn(h, w, |cell| {
        if !map.is_observed(cell) {
            return None;
        }
        let s = map.semantic_at(cell);
        let mut best = (0usize, f64::NEG_INFINITY);
        for (k, q) in embeddings.iter().enumerate() {
            let score: f64 = s.iter().zip(q).map(|(a, b)| a * *b as f64).sum();
            if score > best.1 {
                best = (k, score);
            }
        }
        Some(best.0)
    });
    Ok(Segmentation {
        queries: queries.to_vec(),
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use embedding::EmbeddingKind;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn map(h: usize, w: usize, d: usize) -> GeoSemMap {
        GeoSemMap::new(h, w, d, 1.0, (0.0, 0.0))
    }

    #[test]
    fn two_points_in_one_cell_average() {
        let mut m = map(2, 2, 2);
        let (v, w) = ([1.0f32, 0.0], [0.0f32, 3.0]);
        let stats = m
            .integrate_points([(Point3::new(0.2, 0.3, 0.0), &v[..]), (Point3::new(0.8, 0.9, 1.0), &w[..])])
            .unwrap();
        assert_eq!(stats.binned, 2);
        assert_eq!(m.semantic_at(Cell::new(0, 0)), &[0.5, 1.5]);
        assert_eq!(m.density()[Cell::new(0, 0)], 2);
    }

    #[test]
    fn out_of_grid_point_is_dropped() {
        let mut m = map(2, 2, 1);
        let before = m.clone();
        let v = [1.0f32];
        let stats = m.integrate_points([(Point3::new(5.0, 0.5, 0.0), &v[..])]).unwrap();
        assert_eq!(stats.dropped, 1);
        assert_eq!(m.dropped(), 1);
        assert_eq!(m.semantic, before.semantic);
        assert_eq!(m.density, before.density);
    }

    #[test]
    fn streaming_matches_batch_mean() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let d = 4;
        let pts: Vec<(Point3<f64>, Vec<f32>)> = (0..1000)
            .map(|_| {
                let p = Point3::new(rng.random_range(0.0..3.0), rng.random_range(0.0..3.0), 0.0);
                (p, (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect())
            })
            .collect();
        let mut m = map(3, 3, d);
        let mut start = 0;
        while start < pts.len() {
            let end = (start + rng.random_range(1..100)).min(pts.len());
            m.integrate_points(pts[start..end].iter().map(|(p, e)| (*p, e.as_slice())))
                .unwrap();
            start = end;
        }
        // Batch oracle: plain sums over each cell.
        let mut sums = vec![vec![0.0f64; d]; 9];
        let mut counts = [0usize; 9];
        for (p, e) in &pts {
            let k = (p.y.floor() as usize) * 3 + p.x.floor() as usize;
            counts[k] += 1;
            for (s, &x) in sums[k].iter_mut().zip(e) {
                *s += x as f64;
            }
        }
        for k in 0..9 {
            let cell = Cell::new(k / 3, k % 3);
            for (a, s) in m.semantic_at(cell).iter().zip(&sums[k]) {
                assert!((a - s / counts[k] as f64).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn density_rule_examples() {
        let mut filtered = Grid::filled(3, 3, 0u32);
        filtered[Cell::new(1, 1)] = 7;
        let occ_grid = occupancy_from_density(&filtered, &filtered).unwrap();
        for (c, &v) in occ_grid.cells() {
            assert_eq!(v, if c == Cell::new(1, 1) { 1.0 } else { 0.5 });
        }

        // 5 is exactly 10 % of 50: not occupied.
        let mut f = Grid::filled(1, 3, 0u32);
        f[Cell::new(0, 0)] = 50;
        f[Cell::new(0, 1)] = 5;
        f[Cell::new(0, 2)] = 6;
        let o = occupancy_from_density(&f, &f).unwrap();
        assert_eq!(o.as_slice(), &[1.0, 0.0, 1.0]);

        let empty = Grid::filled(2, 2, 0u32);
        assert!(occupancy_from_density(&empty, &empty).unwrap().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn height_band_excludes_high_points() {
        let m = map(2, 2, 1);
        let band = HeightBand::drone(3.0);
        let f = m.filtered_density(&[Point3::new(0.5, 0.5, 0.9 * 3.0), Point3::new(1.5, 0.5, 1.5)], &band);
        assert_eq!(f[Cell::new(0, 0)], 0);
        assert_eq!(f[Cell::new(0, 1)], 1);
        assert!(HeightBand::new(0.7, 0.3, 3.0).is_err());
    }

    fn provider() -> SyntheticProvider {
        let cats = vec!["a".to_string(), "b".to_string()];
        SyntheticProvider::for_categories(8, EmbeddingKind::Orthonormal, &cats).unwrap()
    }

    #[test]
    fn segmentation_dominant_component_wins() {
        let p = provider();
        let (ea, eb) = (p.label_embedding("a"), p.label_embedding("b"));
        let mix: Vec<f32> = ea.iter().zip(&eb).map(|(a, b)| 0.8 * a + 0.2 * b).collect();
        let mut m = map(1, 2, 8);
        m.integrate_cell(Cell::new(0, 0), &mix).unwrap();
        let seg = zero_shot_segment(&m, &["a".into(), "b".into()], &p).unwrap();
        assert_eq!(seg.label_at(Cell::new(0, 0)), Some("a"));
        assert_eq!(seg.labels[Cell::new(0, 1)], None);

        let single = zero_shot_segment(&m, &["b".into()], &p).unwrap();
        assert_eq!(single.label_at(Cell::new(0, 0)), Some("b"));
        assert!(zero_shot_segment(&m, &[], &p).is_err());
    }

    #[test]
    fn tensor_layout_is_channel_last() {
        let mut m = map(1, 2, 2);
        m.integrate_cell(Cell::new(0, 1), &[1.0, 2.0]).unwrap();
        m.occupancy[Cell::new(0, 1)] = 0.0;
        assert_eq!(m.to_tensor(), vec![0.0, 0.0, 0.5, 1.0, 2.0, 0.0]);
        let back = GeoSemMap::from_tensor(1, 2, 2, &m.to_tensor(), 1.0).unwrap();
        assert_eq!(back.to_tensor(), m.to_tensor());
    }

    proptest! {
        #[test]
        fn segmentation_invariant_to_positive_query_scaling(
            seed in 0u64..200, scale in 0.01f32..100.0,
        ) {
            struct Scaled(SyntheticProvider, f32);
            impl EmbeddingProvider for Scaled {
                fn dim(&self) -> usize { self.0.dim() }
                fn embed_text(&self, q: &str) -> Result<Vec<f32>> {
                    Ok(self.0.embed_text(q)?.into_iter().map(|x| x * self.1).collect())
                }
                fn embed_image(&self, i: &embedding::RgbImage) -> Result<Vec<f32>> { self.0.embed_image(i) }
            }
            let p = SyntheticProvider::new(6, EmbeddingKind::Hashed, vec![]).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut m = map(4, 4, 6);
            for k in 0..16 {
                let v: Vec<f32> = (0..6).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                m.integrate_cell(Cell::new(k / 4, k % 4), &v).unwrap();
            }
            let qs: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
            let a = zero_shot_segment(&m, &qs, &p).unwrap();
            let b = zero_shot_segment(&m, &qs, &Scaled(p.clone(), scale)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
