//! Pinhole camera mounted on the tracker.

use serde::{Deserialize, Serialize};

use super::geometry::Pose;

/// Intrinsics and mounting height; the pose comes from the tracker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub fov_h: f64,
    pub image_w: f64,
    pub image_h: f64,
    pub cam_height: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            fov_h: std::f64::consts::FRAC_PI_2,
            image_w: 160.0,
            image_h: 120.0,
            cam_height: 1.0,
        }
    }
}

impl CameraConfig {
    pub fn focal(&self) -> f64 {
        (self.image_w / 2.0) / (self.fov_h / 2.0).tan()
    }

    pub fn at(&self, pose: Pose) -> Camera {
        Camera {
            pose,
            fov_h: self.fov_h,
            image_w: self.image_w,
            image_h: self.image_h,
            focal: self.focal(),
            cam_height: self.cam_height,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub pose: Pose,
    pub fov_h: f64,
    pub image_w: f64,
    pub image_h: f64,
    pub focal: f64,
    pub cam_height: f64,
}

/// Closest depth at which anything is projected.
pub const NEAR_PLANE: f64 = 0.05;

impl Camera {
    /// Image column of a point at depth `fwd` and lateral offset `left`.
    pub fn column(&self, fwd: f64, left: f64) -> f64 {
        self.image_w / 2.0 - self.focal * left / fwd
    }

    /// Image row of height `z` at depth `fwd`.
    pub fn row(&self, fwd: f64, z: f64) -> f64 {
        self.image_h / 2.0 - self.focal * (z - self.cam_height) / fwd
    }

    /// Box `[cx, cy, w, h]` for the given column and row span, clipped to
    /// the image; `None` when nothing is left.
    pub fn clip_box(&self, u0: f64, u1: f64, v0: f64, v1: f64) -> Option<[f64; 4]> {
        let (u0, u1) = (u0.min(u1).max(0.0), u0.max(u1).min(self.image_w));
        let (v0, v1) = (v0.min(v1).max(0.0), v0.max(v1).min(self.image_h));
        if u1 <= u0 || v1 <= v0 {
            return None;
        }
        Some([(u0 + u1) / 2.0, (v0 + v1) / 2.0, u1 - u0, v1 - v0])
    }
}

/// Projects an upright cylinder standing at `pose` onto the image.
pub fn project_cylinder(camera: &Camera, x: f64, y: f64, radius: f64, height: f64) -> Option<[f64; 4]> {
    let (fwd, left) = camera.pose.to_local(x, y);
    if fwd <= NEAR_PLANE {
        return None;
    }
    let u0 = camera.column(fwd, left + radius);
    let u1 = camera.column(fwd, left - radius);
    let v0 = camera.row(fwd, height);
    let v1 = camera.row(fwd, 0.0);
    camera.clip_box(u0, u1, v0, v1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> Camera {
        CameraConfig::default().at(Pose::default())
    }

    #[test]
    fn focal_for_default_intrinsics() {
        assert!((CameraConfig::default().focal() - 80.0).abs() < 1e-12);
    }

    #[test]
    fn dead_ahead_box() {
        let c = cam();
        let b = project_cylinder(&c, 4.0, 0.0, 0.3, 1.7).unwrap();
        assert!((b[0] - 80.0).abs() < 1e-12);
        assert!((b[2] - 2.0 * 80.0 * 0.3 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn behind_is_absent() {
        assert!(project_cylinder(&cam(), -2.0, 0.0, 0.3, 1.7).is_none());
    }

    #[test]
    fn tall_close_entity_fills_the_image_height() {
        let c = cam();
        // Bottom row reaches the image edge once 80 * 1.0 / d >= 60.
        let b = project_cylinder(&c, 1.0, 0.0, 0.3, 3.0).unwrap();
        assert_eq!(b[3], 120.0);
    }

    #[test]
    fn right_of_axis_is_right_in_image() {
        let b = project_cylinder(&cam(), 4.0, -1.0, 0.3, 1.7).unwrap();
        assert!(b[0] > 80.0);
    }
}
