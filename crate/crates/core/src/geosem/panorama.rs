//! Equirectangular panoramas: perspective resampling, index maps and fusion
//! into a [`GeoSemMap`].
//!
//! Longitude follows the heading convention (0 = north, 90 = east), latitude
//! is positive upward. Pixel `(i, j)` of an `H × W` panorama has its centre at
//! `lon = (j + 0.5) / W · 360 − 180` and `lat = 90 − (i + 0.5) / H · 180`.
//! Panorama depth is the Euclidean range along the pixel ray.

use nalgebra::{Point3, Vector3};

use super::camera::{camera_pose, Pose};
use super::embedding::{RgbImage, SyntheticProvider};
use super::{occupancy_from_density, EmbeddingProvider, GeoSemMap, HeightBand};
use crate::error::{ensure_shape, Error, Result};
use crate::grid::{Cell, Grid};

pub const VIEW_THETAS: [f64; 4] = [-180.0, -90.0, 0.0, 90.0];
pub const VIEW_PHIS: [f64; 3] = [-45.0, 0.0, 45.0];

/// Yaw / pitch of one perspective view, in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewDirection {
    pub theta: f64,
    pub phi: f64,
}

/// The twelve views used for fusion, theta-major.
pub fn view_directions() -> Vec<ViewDirection> {
    VIEW_THETAS
        .iter()
        .flat_map(|&theta| VIEW_PHIS.iter().map(move |&phi| ViewDirection { theta, phi }))
        .collect()
}

/// Unit ray through the centre of panorama pixel `(row, col)`.
pub fn equirect_pixel_direction(height: usize, width: usize, row: usize, col: usize) -> Vector3<f64> {
    let lon = ((col as f64 + 0.5) / width as f64 * 360.0 - 180.0).to_radians();
    let lat = (90.0 - (row as f64 + 0.5) / height as f64 * 180.0).to_radians();
    direction_from_angles(lat, lon)
}

fn direction_from_angles(lat: f64, lon: f64) -> Vector3<f64> {
    Vector3::new(lat.cos() * lon.sin(), -lat.cos() * lon.cos(), lat.sin())
}

/// Panorama pixel whose cell contains direction `d`.
pub fn direction_to_equirect(d: &Vector3<f64>, height: usize, width: usize) -> Cell {
    let n = d.norm();
    let lat = (d.z / n).clamp(-1.0, 1.0).asin().to_degrees();
    let lon = d.x.atan2(-d.y).to_degrees();
    let col = (((lon + 180.0) / 360.0 * width as f64).floor() as isize).rem_euclid(width as isize) as usize;
    let row = (((90.0 - lat) / 180.0 * height as f64).floor().max(0.0) as usize).min(height - 1);
    Cell::new(row, col)
}

/// Ray through perspective pixel `(row, col)` of a square-pixel view with
/// horizontal field of view `fov_deg`. Odd sizes put the optical axis exactly
/// on the centre pixel.
pub fn perspective_ray(view: ViewDirection, fov_deg: f64, out_h: usize, out_w: usize, row: usize, col: usize) -> Vector3<f64> {
    let f = (out_w as f64 / 2.0) / (fov_deg.to_radians() / 2.0).tan();
    let x = (col as f64 - (out_w as f64 - 1.0) / 2.0) / f;
    let y = (row as f64 - (out_h as f64 - 1.0) / 2.0) / f;
    let pose = camera_pose(Point3::origin(), view.theta, view.phi);
    pose.transform_vector(&Vector3::new(x, y, 1.0)).normalize()
}

/// Nearest-neighbour resampling of an equirectangular grid into a perspective
/// view. Works for any pixel type, so it also remaps index maps.
pub fn equirect_to_perspective<T: Copy>(
    equirect: &Grid<T>,
    view: ViewDirection,
    fov_deg: f64,
    out_h: usize,
    out_w: usize,
) -> Grid<T> {
    let (h, w) = equirect.shape();
    Grid::from_fn(out_h, out_w, |c| {
        let ray = perspective_ray(view, fov_deg, out_h, out_w, c.row, c.col);
        equirect[direction_to_equirect(&ray, h, w)]
    })
}

/// Grid whose pixel `(i, j)` holds the global index `base + i·W + j`.
pub fn build_index_map(height: usize, width: usize, base: u64) -> Result<Grid<u64>> {
    let count = (height as u64).checked_mul(width as u64);
    match count.and_then(|n| base.checked_add(n)) {
        Some(_) => Ok(Grid::from_fn(height, width, |c| base + (c.row * width + c.col) as u64)),
        None => Err(Error::IndexOverflow {
            base,
            count: (height as u64).saturating_mul(width as u64),
        }),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionOptions {
    /// Perspective view size in pixels (square).
    pub view_size: usize,
    pub fov: f64,
    /// Each panorama pixel contributes at most once, to the first view that
    /// samples it.
    pub dedup: bool,
    pub band: HeightBand,
    pub index_base: u64,
}

impl FusionOptions {
    pub fn new(band: HeightBand) -> Self {
        Self {
            view_size: 129,
            fov: 90.0,
            dedup: true,
            band,
            index_base: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FusionStats {
    pub views: usize,
    pub points: usize,
    pub duplicates_skipped: usize,
    pub invalid_depth: usize,
    pub dropped: usize,
}

/// Panorama position plus the heading its longitude 0 faces.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PanoramaPose {
    pub position: Point3<f64>,
    pub heading: f64,
}

impl PanoramaPose {
    fn to_pose(self) -> Pose {
        // Yaw about the vertical axis; positive headings turn north toward east.
        let yaw = self.heading.to_radians();
        let m = nalgebra::Matrix3::new(
            yaw.cos(), -yaw.sin(), 0.0, //
            yaw.sin(), yaw.cos(), 0.0, //
            0.0, 0.0, 1.0,
        );
        super::camera::pose_from_parts(m, self.position)
    }
}

/// Splits a panorama into perspective views, embeds each view, back-projects
/// every pixel with valid depth and folds the points into `map`. Occupancy is
/// recomputed from the points of this panorama.
pub fn fuse_panorama(
    rgb: &RgbImage,
    depth: &Grid<f32>,
    pose: PanoramaPose,
    provider: &dyn EmbeddingProvider,
    map: &mut GeoSemMap,
    options: &FusionOptions,
) -> Result<FusionStats> {
    ensure_shape(rgb, depth)?;
    if provider.dim() != map.dim() {
        return Err(Error::Dimension(format!(
            "provider D = {} but map D = {}",
            provider.dim(),
            map.dim()
        )));
    }
    let (h, w) = rgb.shape();
    let index = build_index_map(h, w, options.index_base)?;
    let to_world = pose.to_pose();
    let n = options.view_size;
    let d = map.dim();
    let mut seen = vec![false; h * w];
    let mut stats = FusionStats::default();
    let mut points = Vec::new();

    for view in view_directions() {
        stats.views += 1;
        let view_rgb = equirect_to_perspective(rgb, view, options.fov, n, n);
        let view_idx = equirect_to_perspective(&index, view, options.fov, n, n);
        let emb = provider.embed_image(&view_rgb)?;
        if emb.len() != n * n * d {
            return Err(Error::Dimension(format!(
                "provider returned {} values for a {n}x{n} view with D = {d}",
                emb.len()
            )));
        }
        let mut batch: Vec<(Point3<f64>, &[f32])> = Vec::new();
        for (k, &gidx) in view_idx.iter().enumerate() {
            let local = (gidx - options.index_base) as usize;
            if options.dedup {
                if seen[local] {
                    stats.duplicates_skipped += 1;
                    continue;
                }
                seen[local] = true;
            }
            let src = Cell::new(local / w, local % w);
            let range = depth[src];
            if !(range.is_finite() && range > 0.0) {
                stats.invalid_depth += 1;
                continue;
            }
            let local_pt = Point3::from(equirect_pixel_direction(h, w, src.row, src.col) * range as f64);
            let p = to_world * local_pt;
            points.push(p);
            batch.push((p, &emb[k * d..(k + 1) * d]));
        }
        let s = map.integrate_points(batch)?;
        stats.points += s.binned;
        stats.dropped += s.dropped;
    }

    let filtered = map.filtered_density(&points, &options.band);
    map.occupancy = occupancy_from_density(&filtered, map.density())?;
    Ok(stats)
}

/// Axis-aligned box room in world meters, used to synthesize panoramas.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxRoom {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub height: f64,
}

/// Renders an RGB-D panorama from inside `room`: walls, floor and ceiling are
/// painted with the palette colours of "wall", "floor" and "ceiling".
pub fn render_box_panorama(room: &BoxRoom, eye: Point3<f64>, height: usize, width: usize) -> (RgbImage, Grid<f32>) {
    let wall = SyntheticProvider::palette_color("wall");
    let floor = SyntheticProvider::palette_color("floor");
    let ceiling = SyntheticProvider::palette_color("ceiling");
    let mut rgb = Grid::filled(height, width, [0u8; 3]);
    let mut depth = Grid::filled(height, width, 0.0f32);
    for row in 0..height {
        for col in 0..width {
            let d = equirect_pixel_direction(height, width, row, col);
            let mut best = (f64::INFINITY, wall);
            let mut hit = |t: f64, colour: [u8; 3]| {
                if t > 0.0 && t < best.0 {
                    best = (t, colour);
                }
            };
            if d.x != 0.0 {
                hit(((if d.x > 0.0 { room.x1 } else { room.x0 }) - eye.x) / d.x, wall);
            }
            if d.y != 0.0 {
                hit(((if d.y > 0.0 { room.y1 } else { room.y0 }) - eye.y) / d.y, wall);
            }
            if d.z > 0.0 {
                hit((room.height - eye.z) / d.z, ceiling);
            } else if d.z < 0.0 {
                hit(-eye.z / d.z, floor);
            }
            let c = Cell::new(row, col);
            rgb[c] = best.1;
            depth[c] = best.0 as f32;
        }
    }
    (rgb, depth)
}
