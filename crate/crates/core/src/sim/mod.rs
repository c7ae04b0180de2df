//! Desk-scale tracking simulator.

pub mod camera;
pub mod episode;
pub mod geometry;
pub mod metrics;
pub mod occupancy;
pub mod render;
pub mod scenario;
pub mod visibility;
pub mod world;

pub use camera::{project_cylinder, Camera, CameraConfig};
pub use geometry::{wrap_angle, Obstacle, Pose, Rect};
pub use occupancy::{Cell, OccupancyGrid};
pub use render::{render, Candidate, DescriptorContext, Observation, SensorConfig, CROP_CELLS, CROP_RESOLUTION};
pub use scenario::{ScenarioConfig, TargetMotion, PRESETS};
pub use visibility::{cast_silhouette, visibility, Silhouette};
pub use world::{reward, step_world, Action, ActionLimits, Behavior, Entity, EvaderParams, Tracker, World};
pub use episode::{run_batch, run_episode, run_in_world, EpisodeConfig, EpisodeLog, EpisodeSetup, IdlePolicy, Policy, StepRecord};
pub use metrics::{compute_metrics, correct_action_rate, write_metrics_csv, Metrics};
