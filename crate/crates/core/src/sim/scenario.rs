//! Episode world configurations and presets.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::camera::CameraConfig;
use super::geometry::{Obstacle, Pose, Rect};
use super::render::{DescriptorContext, SensorConfig};
use super::visibility::visibility;
use super::world::{disc_is_free, Behavior, Entity, EvaderParams, Tracker, World};
use crate::features::{generate_manifold_set, ManifoldSpec};
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMotion {
    Static,
    Wanderer,
    Evader,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub room_size: f64,
    pub n_obstacles: usize,
    pub obstacle_size: (f64, f64),
    pub obstacle_height: (f64, f64),
    /// Minimum free gap between obstacles.
    pub obstacle_gap: f64,
    pub n_distractors: usize,
    pub target_motion: TargetMotion,
    pub target_speed: f64,
    pub distractor_speed: f64,
    pub evader: EvaderParams,
    pub spawn_distance: (f64, f64),
    pub tracker_radius: f64,
    pub sensor: SensorConfig,
    pub manifold: ManifoldSpec,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "open".into(),
            room_size: 12.0,
            n_obstacles: 0,
            obstacle_size: (0.8, 2.0),
            obstacle_height: (2.0, 3.0),
            obstacle_gap: 1.4,
            n_distractors: 0,
            target_motion: TargetMotion::Wanderer,
            target_speed: 0.15,
            distractor_speed: 0.15,
            evader: EvaderParams::default(),
            spawn_distance: (2.0, 3.0),
            tracker_radius: 0.25,
            sensor: SensorConfig::default(),
            manifold: ManifoldSpec::default(),
        }
    }
}

pub const PRESETS: [&str; 4] = ["open", "distractors2", "distractors4", "occlusion_heavy"];

impl ScenarioConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self::default();
        let cfg = match name {
            "open" => base,
            "distractors2" => Self {
                n_obstacles: 3,
                n_distractors: 2,
                ..base
            },
            "distractors4" => Self {
                n_obstacles: 3,
                n_distractors: 4,
                ..base
            },
            "occlusion_heavy" => Self {
                n_obstacles: 6,
                n_distractors: 2,
                target_motion: TargetMotion::Evader,
                target_speed: 0.2,
                sensor: SensorConfig {
                    drift_rate: 0.004,
                    drift_max: 2.0,
                    ..SensorConfig::default()
                },
                ..base
            },
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown preset {other:?}; expected one of {PRESETS:?}"
                )))
            }
        };
        Ok(Self {
            name: name.to_string(),
            ..cfg
        })
    }

    pub fn camera(&self) -> CameraConfig {
        self.sensor.camera
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(0.0, 0.0, self.room_size, self.room_size)
    }

    /// Builds a world and its descriptor context, deterministically in `seed`.
    pub fn build(&self, seed: u64) -> Result<(World, DescriptorContext)> {
        let mut rng = rng::child(seed, &[0x5ce2]);
        let bounds = self.bounds();
        let obstacles = self.place_obstacles(&bounds, &mut rng)?;
        let spec = ManifoldSpec {
            num_instances: 1 + self.n_distractors,
            ..self.manifold
        };
        let set = generate_manifold_set(&spec, rng::derive_seed(seed, &[0x3a4f]))?;
        let ctx = DescriptorContext::new(set, self.sensor, &mut rng);

        let margin = 0.3 + 0.3;
        let free = |x: f64, y: f64, r: f64| disc_is_free(&bounds, &obstacles, x, y, r);
        let random_point = |rng: &mut rng::Rng| {
            (
                rng.random_range(bounds.min_x + margin..bounds.max_x - margin),
                rng.random_range(bounds.min_y + margin..bounds.max_y - margin),
            )
        };

        for _ in 0..1000 {
            let (tx, ty) = random_point(&mut rng);
            if !free(tx, ty, margin) {
                continue;
            }
            let d = rng.random_range(self.spawn_distance.0..=self.spawn_distance.1);
            let a = rng.random::<f64>() * std::f64::consts::TAU;
            let (kx, ky) = (tx + d * a.cos(), ty + d * a.sin());
            if !free(kx, ky, self.tracker_radius + 0.2) {
                continue;
            }
            let tracker = Pose::new(kx, ky, (ty - ky).atan2(tx - kx));
            let camera = self.sensor.camera.at(tracker);
            if visibility(&obstacles, &camera, tx, ty, 0.3, 1.7, self.sensor.n_rays) < 0.9 {
                continue;
            }
            let target_behavior = match self.target_motion {
                TargetMotion::Static => Behavior::Static,
                TargetMotion::Wanderer => Behavior::Wanderer,
                TargetMotion::Evader => Behavior::Evader(self.evader),
            };
            let mut entities = vec![Entity::new(
                Pose::new(tx, ty, rng.random::<f64>() * std::f64::consts::TAU),
                0,
                target_behavior,
                self.target_speed,
            )];
            let mut tries = 0;
            while entities.len() < 1 + self.n_distractors && tries < 1000 {
                tries += 1;
                let (x, y) = random_point(&mut rng);
                let clear = free(x, y, margin)
                    && (x - tx).hypot(y - ty) > 1.0
                    && (x - kx).hypot(y - ky) > 1.0
                    && entities.iter().all(|e| (x - e.pose.x).hypot(y - e.pose.y) > 0.8);
                if clear {
                    let id = entities.len() as u32;
                    let yaw = rng.random::<f64>() * std::f64::consts::TAU;
                    entities.push(Entity::new(Pose::new(x, y, yaw), id, Behavior::Wanderer, self.distractor_speed));
                }
            }
            if entities.len() < 1 + self.n_distractors {
                continue;
            }
            let tracker = Tracker {
                pose: tracker,
                radius: self.tracker_radius,
            };
            let world = World::new(bounds, obstacles, tracker, entities, rng::child(seed, &[0xd1a]));
            return Ok((world, ctx));
        }
        Err(Error::SamplingExhausted(1000))
    }

    fn place_obstacles(&self, bounds: &Rect, rng: &mut rng::Rng) -> Result<Vec<Obstacle>> {
        let mut out: Vec<Obstacle> = Vec::with_capacity(self.n_obstacles);
        let (lo, hi) = self.obstacle_size;
        let mut tries = 0;
        while out.len() < self.n_obstacles {
            tries += 1;
            if tries > 10_000 {
                return Err(Error::SamplingExhausted(tries));
            }
            let w = rng.random_range(lo..=hi);
            let h = rng.random_range(lo..=hi);
            let inner = bounds.expanded(-1.0);
            if inner.width() <= w || inner.height() <= h {
                return Err(Error::InvalidArgument("obstacles do not fit in the room".into()));
            }
            let x = rng.random_range(inner.min_x..inner.max_x - w);
            let y = rng.random_range(inner.min_y..inner.max_y - h);
            let r = Rect::new(x, y, x + w, y + h);
            if out.iter().any(|o| o.footprint.expanded(self.obstacle_gap).overlaps(&r)) {
                continue;
            }
            let height = rng.random_range(self.obstacle_height.0..=self.obstacle_height.1);
            out.push(Obstacle::new(r, height));
        }
        Ok(out)
    }
}
