//! Reference backends: ground truth, passthrough and a geometric heuristic.

use serde::{Deserialize, Serialize};

use super::{ImaginationBackend, ImaginedMap};
use crate::error::{Error, Result};
use crate::geosem::GeoSemMap;
use crate::grid::{occ, Cell, Grid};
use crate::scene::Scene;

fn passthrough_semantic(map: &GeoSemMap) -> Vec<f32> {
    let (h, w) = map.shape();
    let mut out = Vec::with_capacity(h * w * map.dim());
    for row in 0..h {
        for col in 0..w {
            out.extend(map.semantic_at(Cell::new(row, col)).iter().map(|&v| v as f32));
        }
    }
    out
}

/// Returns the scene's ground truth regardless of the input.
#[derive(Clone, Debug)]
pub struct OracleBackend {
    truth: ImaginedMap,
}

impl OracleBackend {
    pub fn new(scene: &Scene) -> Self {
        let truth = ImaginedMap::new(
            scene.embedding_dim(),
            scene.semantic().to_vec(),
            scene.occupancy.clone(),
            scene.interior.map(|&e| e as f32),
        )
        .expect("a valid scene yields a valid imagined map");
        Self { truth }
    }
}

impl ImaginationBackend for OracleBackend {
    fn name(&self) -> &str {
        "oracle"
    }

    fn imagine(&self, map: &GeoSemMap, episode: &str) -> Result<ImaginedMap> {
        if map.shape() != self.truth.shape() || map.dim() != self.truth.dim() {
            return Err(Error::Dimension(format!(
                "episode {episode}: map is {:?}x{}, scene is {:?}x{}",
                map.shape(),
                map.dim(),
                self.truth.shape(),
                self.truth.dim()
            )));
        }
        Ok(self.truth.clone())
    }
}

/// No imagination: known cells pass through, everything else is unknown and
/// outside the interior.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityBackend;

impl ImaginationBackend for IdentityBackend {
    fn name(&self) -> &str {
        "identity"
    }

    fn imagine(&self, map: &GeoSemMap, _episode: &str) -> Result<ImaginedMap> {
        let occ_prob = map.occupancy.map(|&v| if occ::is_unknown(v) { occ::UNKNOWN } else { v.clamp(0.0, 1.0) });
        let interior = map.occupancy.map(|&v| if occ::is_unknown(v) { 0.0 } else { 1.0 });
        ImaginedMap::new(map.dim(), passthrough_semantic(map), occ_prob, interior)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicConfig {
    pub close_radius: usize,
    /// Occupancy assigned to unknown cells inside the hull.
    pub unknown_inside: f32,
    /// Occupancy assigned to extrapolated wall cells.
    pub wall_extension: f32,
    pub min_run: usize,
    /// Longest extrapolation, in cells (half the sensor range by default).
    pub max_extension: usize,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            close_radius: 2,
            unknown_inside: 0.3,
            wall_extension: 0.9,
            min_run: 3,
            max_extension: 6,
        }
    }
}

/// Convex-hull interior plus straight-wall extrapolation.
#[derive(Clone, Copy, Debug, Default)]
pub struct HeuristicBackend {
    pub config: HeuristicConfig,
}

impl HeuristicBackend {
    pub fn new(config: HeuristicConfig) -> Self {
        Self { config }
    }
}

impl ImaginationBackend for HeuristicBackend {
    fn name(&self) -> &str {
        "heuristic"
    }

    fn imagine(&self, map: &GeoSemMap, _episode: &str) -> Result<ImaginedMap> {
        let cfg = &self.config;
        let known = map.occupancy.map(|&v| !occ::is_unknown(v));
        let observed: Vec<Cell> = known.cells().filter(|(_, &k)| k).map(|(c, _)| c).collect();
        let mut inside = filled_hull(&known, &observed);
        for c in &observed {
            inside[*c] = true;
        }
        let mut inside = close(&inside, cfg.close_radius);

        let mut occ_prob = Grid::from_fn(map.occupancy.height(), map.occupancy.width(), |c| {
            let v = map.occupancy[c];
            if known[c] {
                v.clamp(0.0, 1.0)
            } else if inside[c] {
                cfg.unknown_inside
            } else {
                occ::UNKNOWN
            }
        });
        for c in extend_walls(&map.occupancy, cfg.min_run, cfg.max_extension) {
            occ_prob[c] = cfg.wall_extension;
            inside[c] = true;
        }
        let interior = inside.map(|&b| if b { 1.0 } else { 0.0 });
        ImaginedMap::new(map.dim(), passthrough_semantic(map), occ_prob, interior)
    }
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull (monotone chain), counter-clockwise in `(row, col)` space,
/// without collinear points.
pub fn convex_hull(points: &[Cell]) -> Vec<(i64, i64)> {
    let mut pts: Vec<(i64, i64)> = points.iter().map(|c| (c.row as i64, c.col as i64)).collect();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<(i64, i64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(i64, i64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Cells whose centre lies in the convex hull of `points` (edges included).
pub fn filled_hull<T>(shape: &Grid<T>, points: &[Cell]) -> Grid<bool> {
    let hull = convex_hull(points);
    let mut out = Grid::filled(shape.height(), shape.width(), false);
    match hull.len() {
        0 => {}
        1 | 2 => {
            let a = hull[0];
            let b = *hull.last().unwrap();
            for (r, c) in crate::sensor::line_cells((a.0 as isize, a.1 as isize), (b.0 as isize, b.1 as isize)) {
                out[Cell::new(r as usize, c as usize)] = true;
            }
        }
        _ => {
            let (rmin, rmax) = (hull.iter().map(|p| p.0).min().unwrap(), hull.iter().map(|p| p.0).max().unwrap());
            let (cmin, cmax) = (hull.iter().map(|p| p.1).min().unwrap(), hull.iter().map(|p| p.1).max().unwrap());
            for r in rmin..=rmax {
                for c in cmin..=cmax {
                    let inside = (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], (r, c)) >= 0);
                    if inside {
                        out[Cell::new(r as usize, c as usize)] = true;
                    }
                }
            }
        }
    }
    out
}

fn disk(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            if dr * dr + dc * dc <= r * r {
                out.push((dr, dc));
            }
        }
    }
    out
}

/// Morphological closing with a disk. Cells outside the grid count as set
/// during erosion, so closing never removes a set cell.
pub fn close(mask: &Grid<bool>, radius: usize) -> Grid<bool> {
    let k = disk(radius);
    let (h, w) = mask.shape();
    let dilated = Grid::from_fn(h, w, |c| {
        k.iter().any(|&(dr, dc)| c.offset(dr, dc).is_some_and(|n| mask.get(n).copied().unwrap_or(false)))
    });
    Grid::from_fn(h, w, |c| {
        k.iter().all(|&(dr, dc)| match c.offset(dr, dc).and_then(|n| dilated.get(n)) {
            Some(&v) => v,
            None => true,
        })
    })
}

/// Unknown cells that continue axis-aligned runs of at least `min_run`
/// observed occupied cells, up to `max_extension` cells past each run end.
pub fn extend_walls(occupancy: &Grid<f32>, min_run: usize, max_extension: usize) -> Vec<Cell> {
    let (h, w) = occupancy.shape();
    let mut out = Vec::new();
    let mut scan = |cells: Vec<Cell>| {
        let mut i = 0;
        while i < cells.len() {
            if !occ::is_occupied(occupancy[cells[i]]) {
                i += 1;
                continue;
            }
            let start = i;
            while i < cells.len() && occ::is_occupied(occupancy[cells[i]]) {
                i += 1;
            }
            if i - start < min_run {
                continue;
            }
            for k in i..cells.len().min(i + max_extension) {
                if !occ::is_unknown(occupancy[cells[k]]) {
                    break;
                }
                out.push(cells[k]);
            }
            for k in (start.saturating_sub(max_extension)..start).rev() {
                if !occ::is_unknown(occupancy[cells[k]]) {
                    break;
                }
                out.push(cells[k]);
            }
        }
    };
    for row in 0..h {
        scan((0..w).map(|col| Cell::new(row, col)).collect());
    }
    for col in 0..w {
        scan((0..h).map(|row| Cell::new(row, col)).collect());
    }
    out.sort_unstable();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagination::{binarize_occupancy, geosem_from_predicted, OCCUPANCY_THRESHOLD};
    use crate::scene::{generate_synthetic_scene, GeneratorConfig};
    use crate::sensor::PredictedMap;

    fn scene() -> Scene {
        generate_synthetic_scene(11, &GeneratorConfig::default()).unwrap()
    }

    #[test]
    fn oracle_returns_ground_truth() {
        let s = scene();
        let p = PredictedMap::unknown(s.height(), s.width());
        let m = geosem_from_predicted(&p, &s).unwrap();
        let out = OracleBackend::new(&s).imagine(&m, "e").unwrap();
        assert_eq!(out.semantic(), s.semantic());
        let b = binarize_occupancy(&out, OCCUPANCY_THRESHOLD);
        for (c, &v) in b.cells() {
            if s.is_interior(c) {
                assert_eq!(v, s.occupancy[c]);
            } else {
                assert_eq!(v, 0.5);
            }
        }
        let small = GeoSemMap::new(3, 3, s.embedding_dim(), 0.25, (0.0, 0.0));
        assert!(OracleBackend::new(&s).imagine(&small, "e").is_err());
    }

    #[test]
    fn identity_on_unknown_and_known_maps() {
        let s = scene();
        let unknown = geosem_from_predicted(&PredictedMap::unknown(s.height(), s.width()), &s).unwrap();
        let out = IdentityBackend.imagine(&unknown, "e").unwrap();
        assert!(out.occ_prob.iter().all(|&v| v == 0.5));
        assert!(out.interior_prob.iter().all(|&v| v == 0.0));

        let full = geosem_from_predicted(&PredictedMap(s.occupancy.clone()), &s).unwrap();
        let out = IdentityBackend.imagine(&full, "e").unwrap();
        assert_eq!(out.occ_prob, s.occupancy);
    }

    #[test]
    fn heuristic_keeps_observations() {
        let s = scene();
        let full = geosem_from_predicted(&PredictedMap(s.occupancy.clone()), &s).unwrap();
        let out = HeuristicBackend::default().imagine(&full, "e").unwrap();
        assert_eq!(out.occ_prob, s.occupancy);
    }

    #[test]
    fn l_shaped_wall_run_is_extended() {
        let mut g = Grid::filled(12, 12, occ::UNKNOWN);
        // Horizontal arm of 5 cells and a vertical arm of 5 sharing a corner.
        for c in 2..7 {
            g[Cell::new(2, c)] = occ::OCCUPIED;
        }
        for r in 2..7 {
            g[Cell::new(r, 2)] = occ::OCCUPIED;
        }
        g[Cell::new(3, 3)] = occ::FREE;
        let ext = extend_walls(&g, 3, 3);
        for c in [Cell::new(2, 7), Cell::new(2, 8), Cell::new(2, 9), Cell::new(7, 2), Cell::new(9, 2)] {
            assert!(ext.contains(&c), "{c:?}");
        }
        assert!(!ext.contains(&Cell::new(2, 10)));
        let mut map = GeoSemMap::new(12, 12, 1, 1.0, (0.0, 0.0));
        map.occupancy = g;
        let out = HeuristicBackend::new(HeuristicConfig {
            max_extension: 3,
            ..Default::default()
        })
        .imagine(&map, "e")
        .unwrap();
        assert_eq!(out.occ_prob[Cell::new(2, 8)], 0.9);
        assert_eq!(out.interior_prob[Cell::new(2, 8)], 1.0);
    }

    #[test]
    fn hull_is_inside_interior() {
        let s = scene();
        let mut p = PredictedMap::unknown(s.height(), s.width());
        for r in 10..20 {
            for c in 5..(5 + r - 8) {
                p.0[Cell::new(r, c)] = s.occupancy[Cell::new(r, c)];
            }
        }
        let m = geosem_from_predicted(&p, &s).unwrap();
        let out = HeuristicBackend::default().imagine(&m, "e").unwrap();
        let known: Vec<Cell> = p.0.cells().filter(|(_, v)| !occ::is_unknown(**v)).map(|(c, _)| c).collect();
        let hull = filled_hull(&p.0, &known);
        let hull_area = hull.iter().filter(|&&b| b).count();
        let interior_area = out.interior_prob.iter().filter(|&&v| v > 0.5).count();
        assert!(hull_area <= interior_area);
        for (c, &b) in hull.cells() {
            if b {
                assert!(out.interior_prob[c] > 0.5);
            }
        }
    }

    #[test]
    fn hull_of_square_corners_fills_square() {
        let pts = [Cell::new(0, 0), Cell::new(0, 4), Cell::new(4, 0), Cell::new(4, 4), Cell::new(2, 2)];
        assert_eq!(convex_hull(&pts).len(), 4);
        let g = filled_hull(&Grid::filled(6, 6, 0u8), &pts);
        assert_eq!(g.iter().filter(|&&b| b).count(), 25);
    }

    #[test]
    fn closing_is_extensive() {
        let mut m = Grid::filled(9, 9, false);
        m[Cell::new(0, 0)] = true;
        for r in 3..8 {
            for col in 3..8 {
                m[Cell::new(r, col)] = (r, col) != (5, 5);
            }
        }
        let c = close(&m, 2);
        for (cell, &v) in m.cells() {
            if v {
                assert!(c[cell]);
            }
        }
        assert!(c[Cell::new(5, 5)]);
    }
}
