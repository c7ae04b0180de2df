//! Synthetic perception: candidate boxes, features and confidences.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::camera::{Camera, CameraConfig, NEAR_PLANE};
use super::geometry::Pose;
use super::occupancy::OccupancyGrid;
use super::visibility::cast_silhouette;
use super::world::World;
use crate::features::{describe_with, FeatureVector, ManifoldSet};
use crate::rng::Rng;

/// Side length, in cells, of the occupancy crop attached to observations.
pub const CROP_CELLS: usize = 16;
/// Cell size of that crop, in metres.
pub const CROP_RESOLUTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// `[cx, cy, w, h]` in pixels.
    pub bbox: [f64; 4],
    /// Ground truth, for scoring only; agents must not read it.
    pub instance_id: u32,
    pub category: String,
    pub visibility: f64,
    pub feature: FeatureVector,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub step: u64,
    pub candidates: Vec<Candidate>,
    /// Egocentric `CROP_CELLS x CROP_CELLS` occupancy, 1.0 for occupied.
    pub occupancy: Vec<f64>,
    pub camera: CameraConfig,
}

impl Observation {
    pub fn candidate_of(&self, instance_id: u32) -> Option<&Candidate> {
        self.candidates.iter().find(|c| c.instance_id == instance_id)
    }
}

/// Perception noise and appearance model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub camera: CameraConfig,
    pub n_rays: usize,
    pub bbox_noise_px: f64,
    pub confidence_sigma: f64,
    /// Per-coordinate Gaussian noise on features.
    pub feature_noise: f64,
    /// Appearance drift grows by this much per step ...
    pub drift_rate: f64,
    /// ... up to this amplitude.
    pub drift_max: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            camera: CameraConfig::default(),
            n_rays: 32,
            bbox_noise_px: 1.0,
            confidence_sigma: 0.05,
            feature_noise: 0.02,
            drift_rate: 0.0,
            drift_max: 0.0,
        }
    }
}

/// Everything needed to turn world state into features.
#[derive(Debug, Clone)]
pub struct DescriptorContext {
    pub manifolds: Arc<ManifoldSet>,
    /// One unit direction per instance, orthogonal to every mean and view
    /// direction, along which that instance's appearance drifts over time.
    pub drift_dirs: Vec<FeatureVector>,
    pub sensor: SensorConfig,
}

impl DescriptorContext {
    pub fn new(manifolds: ManifoldSet, sensor: SensorConfig, rng: &mut Rng) -> Self {
        let dim = manifolds.dim;
        let mut span: Vec<FeatureVector> = manifolds.manifolds.iter().map(|m| m.mean_direction.clone()).collect();
        if let Some(m) = manifolds.manifolds.first() {
            span.extend(m.view_basis.iter().cloned());
        }
        // Means are not mutually orthogonal, so orthonormalize before projecting.
        let mut frame: Vec<FeatureVector> = Vec::with_capacity(span.len());
        for mut v in span {
            for _ in 0..2 {
                for e in &frame {
                    let p = v.dot(e);
                    v.axpy(-p, e);
                }
            }
            if let Ok(u) = v.normalized() {
                if v.norm() > 1e-9 {
                    frame.push(u);
                }
            }
        }
        let mut drift_dirs = Vec::with_capacity(manifolds.manifolds.len());
        while drift_dirs.len() < manifolds.manifolds.len() {
            if frame.len() >= dim {
                // No orthogonal room left; drift is disabled.
                drift_dirs.push(FeatureVector::zeros(dim));
                continue;
            }
            let mut v = FeatureVector::new((0..dim).map(|_| StandardNormal.sample(rng)).collect::<Vec<f64>>());
            for _ in 0..2 {
                for e in &frame {
                    let p = v.dot(e);
                    v.axpy(-p, e);
                }
            }
            if v.norm() > 1e-6 {
                let u = v.normalized().expect("norm checked");
                frame.push(u.clone());
                drift_dirs.push(u);
            }
        }
        Self {
            manifolds: Arc::new(manifolds),
            drift_dirs,
            sensor,
        }
    }

    pub fn drift_amplitude(&self, step: u64) -> f64 {
        (self.sensor.drift_rate * step as f64).min(self.sensor.drift_max)
    }

    /// Feature of instance `id` seen from `view_angle` at time `step`.
    pub fn feature(&self, id: u32, view_angle: f64, step: u64, rng: &mut Rng) -> FeatureVector {
        let m = &self.manifolds.manifolds[id as usize];
        let f = describe_with(m, view_angle, self.sensor.feature_noise, rng);
        let a = self.drift_amplitude(step);
        if a == 0.0 {
            return f;
        }
        let mut v = f.clone();
        v.axpy(a, &self.drift_dirs[id as usize]);
        v.normalized().unwrap_or(f)
    }
}

/// Angle at which an entity is seen, in its own frame.
pub fn view_angle(camera: &Pose, entity: &Pose) -> f64 {
    (camera.y - entity.y).atan2(camera.x - entity.x) - entity.yaw
}

pub fn egocentric_crop(world: &World) -> OccupancyGrid {
    let mut g = OccupancyGrid::egocentric(world.tracker.pose, CROP_CELLS, CROP_CELLS, CROP_RESOLUTION);
    g.rasterize(&world.bounds, &world.obstacles);
    g
}

/// Renders one observation: a candidate for every entity that is at least
/// partly visible, in shuffled order.
pub fn render(world: &World, ctx: &DescriptorContext, rng: &mut Rng) -> Observation {
    let s = &ctx.sensor;
    let camera: Camera = s.camera.at(world.tracker.pose);
    let px = Normal::new(0.0, s.bbox_noise_px.max(0.0)).expect("finite sigma");
    let cn = Normal::new(0.0, s.confidence_sigma.max(0.0)).expect("finite sigma");
    let mut candidates = Vec::new();
    for e in &world.entities {
        let (fwd, left) = camera.pose.to_local(e.pose.x, e.pose.y);
        if fwd <= NEAR_PLANE {
            continue;
        }
        let sil = cast_silhouette(&world.obstacles, &camera, e.pose.x, e.pose.y, e.radius, e.height, s.n_rays);
        let Some((lo, hi)) = sil.visible_span else {
            continue;
        };
        // Only the unoccluded part of the silhouette shows up in the box.
        let Some(clean) = camera.clip_box(
            camera.column(fwd, left + hi),
            camera.column(fwd, left + lo),
            camera.row(fwd, e.height),
            camera.row(fwd, 0.0),
        ) else {
            continue;
        };
        let [cx, cy, w, h] = clean;
        let (cx, cy) = (cx + px.sample(rng), cy + px.sample(rng));
        let (w, h) = ((w + px.sample(rng)).max(0.1), (h + px.sample(rng)).max(0.1));
        let Some(bbox) = camera.clip_box(cx - w / 2.0, cx + w / 2.0, cy - h / 2.0, cy + h / 2.0) else {
            continue;
        };
        let feature = ctx.feature(e.instance_id, view_angle(&camera.pose, &e.pose), world.time_step, rng);
        candidates.push(Candidate {
            bbox,
            instance_id: e.instance_id,
            category: e.category.clone(),
            visibility: sil.fraction,
            feature,
            confidence: (sil.fraction + cn.sample(rng)).clamp(0.0, 1.0),
        });
    }
    candidates.shuffle(rng);
    Observation {
        step: world.time_step,
        candidates,
        occupancy: egocentric_crop(world).as_f64(),
        camera: s.camera,
    }
}
