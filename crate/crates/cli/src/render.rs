//! PNG rendering of scenes, query heatmaps and episode paths.
//!
//! Palette:
//!
//! | what                  | RGB             |
//! |-----------------------|-----------------|
//! | free interior         | 255, 255, 255   |
//! | occupied              | 0, 0, 0         |
//! | exterior              | 96, 96, 96      |
//! | object footprint      | per-label hash color (same as the synthetic camera) |
//! | heatmap               | dark blue (low) to yellow (high), exterior black |
//! | zone mean / goal      | red cross / green cell |
//! | paths                 | one color per policy, start in magenta, end in cyan |

use std::path::Path;

use anyhow::{Context, Result};
use foresight::geosem::embedding::{cosine, SyntheticProvider};
use foresight::goal_select::CandidateZones;
use foresight::grid::{occ, Cell, Grid};
use foresight::scene::Scene;
use image::{Rgb, RgbImage};

pub const FREE: [u8; 3] = [255, 255, 255];
pub const OCCUPIED: [u8; 3] = [0, 0, 0];
pub const EXTERIOR: [u8; 3] = [96, 96, 96];
pub const ZONE: [u8; 3] = [220, 20, 20];
pub const GOAL: [u8; 3] = [20, 200, 60];
pub const START: [u8; 3] = [230, 0, 230];
pub const END: [u8; 3] = [0, 210, 230];
pub const PATH_COLORS: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [148, 103, 189],
    [140, 86, 75],
    [188, 189, 34],
];

/// Cell colors, one per grid cell.
pub fn scene_colors(scene: &Scene) -> Grid<[u8; 3]> {
    let mut g = Grid::from_fn(scene.height(), scene.width(), |c| {
        if occ::is_occupied(scene.occupancy[c]) {
            OCCUPIED
        } else if scene.is_interior(c) {
            FREE
        } else {
            EXTERIOR
        }
    });
    for obj in &scene.objects {
        let color = SyntheticProvider::palette_color(&obj.category);
        for &c in &obj.footprint {
            g[c] = color;
        }
    }
    g
}

/// Cosine similarity to `query`, min-max normalized over interior cells.
pub fn heatmap_colors(scene: &Scene, query: &[f32]) -> Grid<[u8; 3]> {
    let scores = Grid::from_fn(scene.height(), scene.width(), |c| {
        if scene.is_interior(c) {
            Some(cosine(scene.semantic_at(c), query).unwrap_or(0.0))
        } else {
            None
        }
    });
    let (lo, hi) = scores
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    scores.map(|s| match s {
        None => [0, 0, 0],
        Some(v) => {
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 1.0 };
            let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
            [lerp(20.0, 250.0), lerp(20.0, 230.0), lerp(120.0, 40.0)]
        }
    })
}

pub fn mark_zones(colors: &mut Grid<[u8; 3]>, zones: &CandidateZones, goal: Option<Cell>) {
    for z in &zones.zones {
        let (r, c) = (z.mean.x.round() as isize, z.mean.y.round() as isize);
        for (dr, dc) in [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)] {
            if colors.contains(r + dr, c + dc) {
                colors[Cell::new((r + dr) as usize, (c + dc) as usize)] = ZONE;
            }
        }
    }
    if let Some(g) = goal {
        colors[g] = GOAL;
    }
}

pub fn mark_path(colors: &mut Grid<[u8; 3]>, cells: &[Cell], color: [u8; 3]) {
    for &c in cells {
        if colors.in_bounds(c) {
            colors[c] = color;
        }
    }
}

/// Writes `colors` as a PNG with `scale`×`scale` pixels per cell.
pub fn save_png(colors: &Grid<[u8; 3]>, scale: u32, path: &Path) -> Result<()> {
    let (h, w) = colors.shape();
    let img = RgbImage::from_fn(w as u32 * scale, h as u32 * scale, |x, y| {
        Rgb(colors[Cell::new((y / scale) as usize, (x / scale) as usize)])
    });
    img.save(path)
        .with_context(|| format!("cannot write {}", path.display()))
}
