//! Expert planning samples and their JSON Lines persistence.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::astar::Dijkstra;
use super::scenario::{sample_scenario, Archetype, Scenario, ScenarioParams, ARCHETYPES};
use crate::rng::{self, Rng};
use crate::sim::{project_cylinder, visibility, CameraConfig, Cell, OccupancyGrid, Pose, Rect, CROP_CELLS, CROP_RESOLUTION};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanParams {
    pub resolution: f64,
    /// Side of the square egocentric planning grid, in cells; odd so the
    /// tracker sits on a cell centre.
    pub grid_cells: usize,
    pub plan_radius: f64,
    pub horizon: usize,
    pub goal_visibility: f64,
    /// Goals closer than this to the target are rejected.
    pub min_goal_distance: f64,
    /// Probability of flipping each occupancy bit in randomized samples.
    pub flip_probability: f64,
}

impl Default for PlanParams {
    fn default() -> Self {
        Self {
            resolution: 0.25,
            grid_cells: 33,
            plan_radius: 4.0,
            horizon: 16,
            goal_visibility: 0.9,
            min_goal_distance: 0.8,
            flip_probability: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub resolution: f64,
    pub w: usize,
    pub h: usize,
    pub rle: String,
}

impl GridRecord {
    pub fn from_grid(g: &OccupancyGrid) -> Self {
        Self {
            resolution: g.resolution,
            w: g.width,
            h: g.height,
            rle: g.to_rle(),
        }
    }

    /// The grid in the tracker frame, centred on the tracker.
    pub fn to_grid(&self) -> Result<OccupancyGrid> {
        let mut g = OccupancyGrid::egocentric(Pose::default(), self.w, self.h, self.resolution);
        g.occupied = OccupancyGrid::occupied_from_rle(&self.rle, self.w * self.h)?;
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSample {
    pub id: u64,
    pub archetype: Archetype,
    pub randomized: bool,
    pub obs: Vec<f64>,
    pub bbox: [f64; 4],
    pub traj: Vec<[f64; 2]>,
    pub grid: GridRecord,
}

impl PlanSample {
    /// Condition vector fed to the planner: the occupancy crop then the box.
    pub fn condition(&self) -> Vec<f64> {
        let mut c = self.obs.clone();
        c.extend_from_slice(&self.bbox);
        c
    }

    pub fn flat_traj(&self) -> Vec<f64> {
        self.traj.iter().flat_map(|p| p.iter().copied()).collect()
    }
}

/// Occupancy around the tracker as the planner sees it: a
/// `CROP_CELLS x CROP_CELLS` egocentric crop.
pub fn obs_encoding(pose: Pose, bounds: &Rect, obstacles: &[crate::sim::Obstacle]) -> Vec<f64> {
    let mut g = OccupancyGrid::egocentric(pose, CROP_CELLS, CROP_CELLS, CROP_RESOLUTION);
    g.rasterize(bounds, obstacles);
    g.as_f64()
}

/// Box normalized by the image size and clamped to the unit square.
pub fn normalize_bbox(b: [f64; 4], camera: &CameraConfig) -> [f64; 4] {
    [
        (b[0] / camera.image_w).clamp(0.0, 1.0),
        (b[1] / camera.image_h).clamp(0.0, 1.0),
        (b[2] / camera.image_w).clamp(0.0, 1.0),
        (b[3] / camera.image_h).clamp(0.0, 1.0),
    ]
}

/// Egocentric planning grid with obstacles inflated by the tracker radius.
pub fn planning_grid(pose: Pose, bounds: &Rect, obstacles: &[crate::sim::Obstacle], radius: f64, p: &PlanParams) -> OccupancyGrid {
    let inflated: Vec<_> = obstacles
        .iter()
        .map(|o| crate::sim::Obstacle::new(o.footprint.expanded(radius), o.height))
        .collect();
    let mut g = OccupancyGrid::egocentric(pose, p.grid_cells, p.grid_cells, p.resolution);
    g.rasterize(&bounds.expanded(-radius), &inflated);
    g
}

/// `n` points evenly spaced by arc length along a polyline, endpoints included.
pub fn resample(points: &[(f64, f64)], n: usize) -> Vec<(f64, f64)> {
    if points.is_empty() || n == 0 {
        return Vec::new();
    }
    let mut cum = vec![0.0];
    for w in points.windows(2) {
        let d = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
        cum.push(cum.last().unwrap() + d);
    }
    let total = *cum.last().unwrap();
    if total == 0.0 || n == 1 {
        return vec![points[0]; n.max(1)].into_iter().take(n).collect();
    }
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for i in 0..n {
        let s = total * i as f64 / (n - 1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { ((s - cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        let (a, b) = (points[seg], points[seg + 1]);
        out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
    }
    out
}

/// Whether a normalized trajectory, densely interpolated, stays on free
/// cells of an egocentric grid.
pub fn trajectory_collision_free(grid: &OccupancyGrid, traj: &[[f64; 2]], plan_radius: f64) -> bool {
    let step = grid.resolution / 4.0;
    let pts: Vec<(f64, f64)> = traj.iter().map(|p| (p[0] * plan_radius, p[1] * plan_radius)).collect();
    let free = |(f, l): (f64, f64)| grid.local_to_cell(f, l).is_some_and(|c| grid.is_free(c));
    if pts.is_empty() {
        return true;
    }
    if !free(pts[0]) {
        return false;
    }
    for w in pts.windows(2) {
        let d = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
        let n = (d / step).ceil().max(1.0) as usize;
        for k in 1..=n {
            let t = k as f64 / n as f64;
            if !free((w[0].0 + t * (w[1].0 - w[0].0), w[0].1 + t * (w[1].1 - w[0].1))) {
                return false;
            }
        }
    }
    true
}

/// Distance at which a standing target fills `h_norm` of the image height.
pub fn range_from_box(bbox: &[f64; 4], camera: &CameraConfig, target_height: f64) -> f64 {
    let h = (bbox[3] * camera.image_h).max(1e-6);
    camera.focal() * target_height / h
}

/// Baseline: a straight line from the tracker toward where the box says the
/// target is, truncated to the plan radius.
pub fn straight_line_plan(bbox: &[f64; 4], camera: &CameraConfig, p: &PlanParams, target_height: f64) -> Vec<[f64; 2]> {
    let d = range_from_box(bbox, camera, target_height);
    let u = bbox[0] * camera.image_w;
    let bearing = ((camera.image_w / 2.0 - u) / camera.focal()).atan();
    let r = (d / p.plan_radius).min(1.0);
    let n = p.horizon;
    (0..n)
        .map(|i| {
            let s = r * i as f64 / (n.max(2) - 1) as f64;
            [s * bearing.cos(), s * bearing.sin()]
        })
        .collect()
}

/// Labels a scenario with an expert trajectory: the cheapest grid path from
/// the tracker to the first cell that sees the target well enough.
pub fn make_sample(s: &Scenario, camera: &CameraConfig, p: &PlanParams, n_rays: usize) -> Result<PlanSample> {
    let w = &s.world;
    let pose = s.tracker_pose;
    let grid = planning_grid(pose, &w.bounds, &w.obstacles, w.tracker.radius, p);
    let start: Cell = (p.grid_cells / 2, p.grid_cells / 2);
    let target = w.target();
    let (tx, ty) = target.pose.position();
    let sees = |c: Cell| {
        let (x, y) = grid.cell_center_world(c);
        if (tx - x).hypot(ty - y) < p.min_goal_distance {
            return false;
        }
        let cam = camera.at(Pose::new(x, y, (ty - y).atan2(tx - x)));
        visibility(&w.obstacles, &cam, tx, ty, target.radius, target.height, n_rays) >= p.goal_visibility
    };
    if !grid.is_free(start) {
        return Err(Error::NoPath { start, goal: start });
    }
    let (dij, goal) = Dijkstra::run(&grid, start, sees);
    let goal = goal.ok_or(Error::NoPath { start, goal: start })?;
    let path = dij.path_to(&grid, goal).ok_or(Error::NoPath { start, goal })?;
    let local: Vec<(f64, f64)> = path.iter().map(|&c| grid.cell_center_local(c)).collect();
    let traj = resample(&local, p.horizon)
        .into_iter()
        .map(|(f, l)| [(f / p.plan_radius).clamp(-1.0, 1.0), (l / p.plan_radius).clamp(-1.0, 1.0)])
        .collect();
    let cam = camera.at(pose);
    let raw = project_cylinder(&cam, tx, ty, target.radius, target.height)
        .ok_or_else(|| Error::InvalidArgument("target outside the field of view".into()))?;
    Ok(PlanSample {
        id: 0,
        archetype: s.archetype,
        randomized: false,
        obs: obs_encoding(pose, &w.bounds, &w.obstacles),
        bbox: normalize_bbox(raw, camera),
        traj,
        grid: GridRecord::from_grid(&grid),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n: usize,
    pub randomized_fraction: f64,
    pub seed: u64,
    /// Size jitter applied to randomized samples.
    pub jitter: f64,
    pub scenario: ScenarioParams,
    pub plan: PlanParams,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n: 500,
            randomized_fraction: 0.6,
            seed: 0,
            jitter: 0.25,
            scenario: ScenarioParams::default(),
            plan: PlanParams::default(),
        }
    }
}

/// One labelled sample for index `id`, resampling scenarios whose expert
/// search fails.
pub fn generate_one(id: u64, archetype: Archetype, randomized: bool, cfg: &DatasetConfig) -> Result<PlanSample> {
    let mut r: Rng = rng::child(cfg.seed, &[0xda7a, id]);
    let sp = ScenarioParams {
        size_jitter: if randomized { cfg.jitter } else { 0.0 },
        ..cfg.scenario
    };
    for _ in 0..sp.max_retries {
        let scenario = sample_scenario(archetype, &mut r, &sp)?;
        match make_sample(&scenario, &sp.camera, &cfg.plan, sp.n_rays) {
            Ok(mut s) => {
                s.id = id;
                s.randomized = randomized;
                if randomized {
                    for v in &mut s.obs {
                        if r.random::<f64>() < cfg.plan.flip_probability {
                            *v = 1.0 - *v;
                        }
                    }
                }
                return Ok(s);
            }
            Err(Error::NoPath { .. }) | Err(Error::InvalidArgument(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::SamplingExhausted(sp.max_retries))
}

/// Generates `cfg.n` samples: archetypes cycle so the mix is uniform, and an
/// exact `round(n * fraction)` of them, picked at random, are randomized.
pub fn generate_samples(cfg: &DatasetConfig) -> Result<Vec<PlanSample>> {
    if cfg.n == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&cfg.randomized_fraction) {
        return Err(Error::InvalidArgument("randomized fraction must lie in [0, 1]".into()));
    }
    let n_rand = (cfg.n as f64 * cfg.randomized_fraction).round() as usize;
    let mut order: Vec<usize> = (0..cfg.n).collect();
    order.shuffle(&mut rng::child(cfg.seed, &[0x5a4d]));
    let mut randomized = vec![false; cfg.n];
    for &i in order.iter().take(n_rand) {
        randomized[i] = true;
    }
    (0..cfg.n)
        .into_par_iter()
        .map(|i| generate_one(i as u64, ARCHETYPES[i % ARCHETYPES.len()], randomized[i], cfg))
        .collect()
}

pub fn write_samples<W: Write>(mut out: W, samples: &[PlanSample]) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_samples<R: BufRead>(input: R) -> Result<Vec<PlanSample>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Writes a dataset file and returns the samples written.
pub fn generate_dataset(cfg: &DatasetConfig, out_path: &std::path::Path) -> Result<Vec<PlanSample>> {
    let samples = generate_samples(cfg)?;
    let f = std::fs::File::create(out_path)?;
    write_samples(std::io::BufWriter::new(f), &samples)?;
    Ok(samples)
}
