//! Pinhole back-projection and camera-to-world transforms.
//!
//! Camera frame: x right, y down, z forward. World frame: x east (grid
//! columns), y south (grid rows), z up. The world axes are mirrored with
//! respect to the camera axes, so poses are affine maps with determinant -1
//! rather than proper rotations.

use nalgebra::{Affine3, Matrix3, Matrix4, Point3, Vector3};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "focal lengths must be positive and finite (fx = {fx}, fy = {fy})"
            )));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Square-pixel intrinsics for a `width × height` image with horizontal
    /// field of view `fov_deg`, principal point at the image centre.
    pub fn from_fov(width: usize, height: usize, fov_deg: f64) -> Result<Self> {
        let f = (width as f64 / 2.0) / (fov_deg.to_radians() / 2.0).tan();
        Self::new(f, f, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
    }

    /// Pixel coordinates of a camera-frame point, or `None` behind the camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64)> {
        (p.z > 0.0).then(|| (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// `p = d · K⁻¹ [u, v, 1]ᵀ`. Depth is measured along the optical axis.
pub fn backproject_pixel(u: f64, v: f64, depth: f64, k: &Intrinsics) -> Result<Point3<f64>> {
    if !depth.is_finite() || depth < 0.0 {
        return Err(Error::InvalidArgument(format!("invalid depth {depth}")));
    }
    Ok(Point3::new(
        depth * (u - k.cx) / k.fx,
        depth * (v - k.cy) / k.fy,
        depth,
    ))
}

/// Rigid camera-to-world map.
pub type Pose = Affine3<f64>;

pub fn transform_to_world(p: &Point3<f64>, pose: &Pose) -> Point3<f64> {
    pose * p
}

/// Pose of a camera at `position` with yaw `heading_deg` (0 = north, 90 =
/// east) and pitch `pitch_deg` (positive looks up).
pub fn camera_pose(position: Point3<f64>, heading_deg: f64, pitch_deg: f64) -> Pose {
    let (yaw, pitch) = (heading_deg.to_radians(), pitch_deg.to_radians());
    let forward = Vector3::new(yaw.sin() * pitch.cos(), -yaw.cos() * pitch.cos(), pitch.sin());
    let right = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let down = Vector3::new(yaw.sin() * pitch.sin(), -yaw.cos() * pitch.sin(), -pitch.cos());
    pose_from_parts(Matrix3::from_columns(&[right, down, forward]), position)
}

/// Pose from a camera-axes-to-world matrix and a camera position.
pub fn pose_from_parts(axes: Matrix3<f64>, position: Point3<f64>) -> Pose {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&axes);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&position.coords);
    Pose::from_matrix_unchecked(m)
}
