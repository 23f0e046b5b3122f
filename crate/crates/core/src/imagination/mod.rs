//! Imagination: predicting the full map (semantics, occupancy, interior) from
//! a partially observed GeoSem map.

pub mod backends;
pub mod protocol;
pub mod remote;
pub mod training;

use crate::error::{Error, Result};
use crate::geosem::GeoSemMap;
use crate::grid::{occ, Cell, Grid};
use crate::scene::Scene;
use crate::sensor::PredictedMap;

pub use backends::{HeuristicBackend, HeuristicConfig, IdentityBackend, OracleBackend};
pub use remote::RemoteBackend;

/// Occupancy threshold used when binarizing imagined maps (strictly exceeded).
pub const OCCUPANCY_THRESHOLD: f32 = 0.72;

/// `H × W × (D+2)` prediction: semantics, occupancy probability and
/// interior probability.
#[derive(Clone, Debug, PartialEq)]
pub struct ImaginedMap {
    dim: usize,
    semantic: Vec<f32>,
    pub occ_prob: Grid<f32>,
    pub interior_prob: Grid<f32>,
}

impl ImaginedMap {
    pub fn new(dim: usize, semantic: Vec<f32>, occ_prob: Grid<f32>, interior_prob: Grid<f32>) -> Result<Self> {
        crate::error::ensure_shape(&occ_prob, &interior_prob)?;
        if semantic.len() != occ_prob.len() * dim {
            return Err(Error::Dimension(format!(
                "semantic has {} values, expected {}",
                semantic.len(),
                occ_prob.len() * dim
            )));
        }
        let map = Self {
            dim,
            semantic,
            occ_prob,
            interior_prob,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.occ_prob.shape()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn semantic(&self) -> &[f32] {
        &self.semantic
    }

    pub fn semantic_at(&self, cell: Cell) -> &[f32] {
        let i = self.occ_prob.index_of(cell) * self.dim;
        &self.semantic[i..i + self.dim]
    }

    /// Probabilities in [0, 1] and every value finite.
    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self.semantic.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite semantic value {v}")));
        }
        for (name, g) in [("occ_prob", &self.occ_prob), ("interior_prob", &self.interior_prob)] {
            if let Some((c, v)) = g.cells().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidArgument(format!("{name} at {c:?} is {v}")));
            }
        }
        Ok(())
    }

    /// Channel-last `H·W·(D+2)` layout: semantics, occupancy, interior.
    pub fn to_tensor(&self) -> Vec<f32> {
        let d = self.dim;
        let mut out = Vec::with_capacity(self.occ_prob.len() * (d + 2));
        for k in 0..self.occ_prob.len() {
            out.extend_from_slice(&self.semantic[k * d..(k + 1) * d]);
            out.push(self.occ_prob.as_slice()[k]);
            out.push(self.interior_prob.as_slice()[k]);
        }
        out
    }

    pub fn from_tensor(height: usize, width: usize, dim: usize, data: &[f32]) -> Result<Self> {
        let stride = dim + 2;
        if data.len() != height * width * stride {
            return Err(Error::Dimension(format!(
                "tensor has {} values, expected {height}x{width}x{stride}",
                data.len()
            )));
        }
        let mut semantic = Vec::with_capacity(height * width * dim);
        let mut occ_prob = Vec::with_capacity(height * width);
        let mut interior = Vec::with_capacity(height * width);
        for cell in data.chunks_exact(stride) {
            semantic.extend_from_slice(&cell[..dim]);
            occ_prob.push(cell[dim]);
            interior.push(cell[dim + 1]);
        }
        Self::new(
            dim,
            semantic,
            Grid::from_vec(height, width, occ_prob).expect("sized"),
            Grid::from_vec(height, width, interior).expect("sized"),
        )
    }
}

/// Predicts a complete map from a partial one. Output dimensions always match
/// the input.
pub trait ImaginationBackend: Send + Sync {
    fn name(&self) -> &str;

    /// `episode` only labels errors.
    fn imagine(&self, map: &GeoSemMap, episode: &str) -> Result<ImaginedMap>;
}

/// `{0, 1, 0.5}` grid: occupied iff `occ_prob > threshold` inside the
/// interior (`interior_prob > 0.5`), free if not above it, unknown outside.
pub fn binarize_occupancy(map: &ImaginedMap, threshold: f32) -> Grid<f32> {
    let (h, w) = map.shape();
    Grid::from_fn(h, w, |c| {
        if map.interior_prob[c] <= 0.5 {
            occ::UNKNOWN
        } else if map.occ_prob[c] > threshold {
            occ::OCCUPIED
        } else {
            occ::FREE
        }
    })
}

/// Planning grid: binarized imagination with every observed cell of `p`
/// overriding the imagined value.
pub fn overlay_observed(imagined: &Grid<f32>, p: &PredictedMap) -> Result<Grid<f32>> {
    crate::error::ensure_shape(imagined, p.grid())?;
    Ok(Grid::from_fn(imagined.height(), imagined.width(), |c| {
        let v = p.grid()[c];
        if occ::is_unknown(v) {
            imagined[c]
        } else {
            v
        }
    }))
}

/// GeoSem view of a simulated belief: occupancy from `p`, ground-truth
/// semantics on known cells, zero elsewhere.
pub fn geosem_from_predicted(p: &PredictedMap, scene: &Scene) -> Result<GeoSemMap> {
    crate::error::ensure_shape(p.grid(), &scene.occupancy)?;
    let (h, w) = scene.shape();
    let mut map = GeoSemMap::new(h, w, scene.embedding_dim(), scene.resolution, (0.0, 0.0));
    for (c, &v) in p.grid().cells() {
        if !occ::is_unknown(v) {
            map.integrate_cell(c, scene.semantic_at(c))?;
        }
    }
    map.occupancy = p.grid().clone();
    Ok(map)
}

/// Occupancy IoU against the ground truth over interior cells, using the
/// binarized prediction. Both sets empty counts as 1.
pub fn occupancy_iou(map: &ImaginedMap, scene: &Scene, threshold: f32) -> f64 {
    let b = binarize_occupancy(map, threshold);
    let (mut inter, mut union) = (0usize, 0usize);
    for (c, &v) in b.cells() {
        if !scene.is_interior(c) {
            continue;
        }
        let pred = v == occ::OCCUPIED;
        let truth = occ::is_occupied(scene.occupancy[c]);
        inter += (pred && truth) as usize;
        union += (pred || truth) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn imagined(occ_vals: &[f32], interior: &[f32]) -> ImaginedMap {
        let n = occ_vals.len();
        ImaginedMap::new(
            1,
            vec![0.0; n],
            Grid::from_vec(1, n, occ_vals.to_vec()).unwrap(),
            Grid::from_vec(1, n, interior.to_vec()).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn binarize_is_strict_at_threshold() {
        let m = imagined(&[0.72, 0.7201, 0.9, 0.1], &[1.0, 1.0, 0.5, 0.51]);
        assert_eq!(binarize_occupancy(&m, OCCUPANCY_THRESHOLD).as_slice(), &[0.0, 1.0, 0.5, 0.0]);
    }

    #[test]
    fn zero_interior_is_all_unknown() {
        let m = imagined(&[0.0, 1.0, 0.5], &[0.0, 0.0, 0.0]);
        assert!(binarize_occupancy(&m, OCCUPANCY_THRESHOLD).iter().all(|&v| v == 0.5));
    }

    #[test]
    fn invalid_probabilities_are_rejected() {
        let r = ImaginedMap::new(
            1,
            vec![0.0],
            Grid::filled(1, 1, 1.5),
            Grid::filled(1, 1, 0.0),
        );
        assert!(r.is_err());
        let r = ImaginedMap::new(1, vec![f32::NAN], Grid::filled(1, 1, 0.5), Grid::filled(1, 1, 0.0));
        assert!(r.is_err());
    }

    #[test]
    fn tensor_round_trip() {
        let m = ImaginedMap::new(
            2,
            vec![1.0, 2.0, 3.0, 4.0],
            Grid::from_vec(1, 2, vec![0.25, 0.75]).unwrap(),
            Grid::from_vec(1, 2, vec![1.0, 0.0]).unwrap(),
        )
        .unwrap();
        let t = m.to_tensor();
        assert_eq!(t, vec![1.0, 2.0, 0.25, 1.0, 3.0, 4.0, 0.75, 0.0]);
        assert_eq!(ImaginedMap::from_tensor(1, 2, 2, &t).unwrap(), m);
        assert!(ImaginedMap::from_tensor(1, 2, 3, &t).is_err());
    }

    #[test]
    fn observed_cells_override_imagination() {
        let imagined = Grid::from_vec(1, 3, vec![1.0, 1.0, 0.0]).unwrap();
        let p = PredictedMap(Grid::from_vec(1, 3, vec![0.0, 0.5, 1.0]).unwrap());
        assert_eq!(overlay_observed(&imagined, &p).unwrap().as_slice(), &[0.0, 1.0, 1.0]);
    }
}
