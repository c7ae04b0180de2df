//! Planning samples: occlusion scenarios, expert paths and dataset files.

pub mod astar;
pub mod sample;
pub mod scenario;

pub use astar::{astar, octile, path_cost, Dijkstra, PathCost};
pub use sample::{
    generate_dataset, generate_one, generate_samples, make_sample, normalize_bbox, obs_encoding, planning_grid, read_samples,
    straight_line_plan, trajectory_collision_free, write_samples, DatasetConfig, GridRecord, PlanParams, PlanSample,
};
pub use scenario::{sample_scenario, Archetype, Edge, Scenario, ScenarioParams, ARCHETYPES};
