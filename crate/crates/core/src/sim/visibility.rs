//! Ray-cast occlusion of entity silhouettes by box obstacles.

use super::camera::Camera;
use super::geometry::Obstacle;

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Result of casting rays at one silhouette.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Silhouette {
    /// Fraction of unblocked rays.
    pub fraction: f64,
    /// Lateral extent (left positive, metres from the centre line) of the
    /// unblocked rays, widened by half a ray spacing on each side.
    pub visible_span: Option<(f64, f64)>,
}

/// Casts `n_rays` rays from the camera to points spread evenly across the
/// width of an upright cylinder and at low-discrepancy heights on it.
pub fn cast_silhouette(
    obstacles: &[Obstacle],
    camera: &Camera,
    x: f64,
    y: f64,
    radius: f64,
    height: f64,
    n_rays: usize,
) -> Silhouette {
    let n = n_rays.max(1);
    let (cx, cy) = camera.pose.position();
    let (dx, dy) = (x - cx, y - cy);
    let d = dx.hypot(dy);
    // Unit vector to the left of the line of sight.
    let (lx, ly) = if d > 1e-12 { (-dy / d, dx / d) } else { (0.0, 1.0) };
    let spacing = 2.0 * radius / n as f64;
    let mut visible = 0usize;
    let mut span: Option<(f64, f64)> = None;
    for i in 0..n {
        let s = -radius + spacing * (i as f64 + 0.5);
        let h = height * (0.5 + GOLDEN * i as f64).fract();
        let p = (x + s * lx, y + s * ly);
        let blocked = obstacles.iter().any(|o| {
            o.footprint.clip_segment((cx, cy), p).is_some_and(|(t0, t1)| {
                let z = |t: f64| camera.cam_height + t * (h - camera.cam_height);
                z(t0).min(z(t1)) < o.height
            })
        });
        if !blocked {
            visible += 1;
            let (lo, hi) = (s - spacing / 2.0, s + spacing / 2.0);
            span = Some(span.map_or((lo, hi), |(a, b)| (a.min(lo), b.max(hi))));
        }
    }
    Silhouette {
        fraction: visible as f64 / n as f64,
        visible_span: span,
    }
}

pub fn visibility(
    obstacles: &[Obstacle],
    camera: &Camera,
    x: f64,
    y: f64,
    radius: f64,
    height: f64,
    n_rays: usize,
) -> f64 {
    cast_silhouette(obstacles, camera, x, y, radius, height, n_rays).fraction
}
