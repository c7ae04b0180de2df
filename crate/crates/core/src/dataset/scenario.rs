//! Occlusion scenarios: a target hidden behind an obstacle edge, seen from an
//! adjacent edge.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::sim::{visibility, Behavior, CameraConfig, Entity, Obstacle, Pose, Rect, Tracker, World};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    SingleSide,
    DoubleSide,
    Corridor,
}

pub const ARCHETYPES: [Archetype; 3] = [Archetype::SingleSide, Archetype::DoubleSide, Archetype::Corridor];

impl Archetype {
    pub fn name(self) -> &'static str {
        match self {
            Archetype::SingleSide => "single_side",
            Archetype::DoubleSide => "double_side",
            Archetype::Corridor => "corridor",
        }
    }
}

impl std::str::FromStr for Archetype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ARCHETYPES
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown archetype {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Edge {
    North,
    East,
    South,
    West,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub room_size: f64,
    /// Extra obstacles scattered away from the occlusion site.
    pub clutter: (usize, usize),
    /// Zero removes every obstacle, which makes the occlusion filter unsatisfiable.
    pub max_obstacles: usize,
    /// Obstacle sizes are scaled by a factor in `1 ± size_jitter`.
    pub size_jitter: f64,
    pub obstacle_height: (f64, f64),
    pub max_retries: usize,
    pub camera: CameraConfig,
    pub n_rays: usize,
    pub tracker_radius: f64,
    pub target_radius: f64,
    pub target_height: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            room_size: 12.0,
            clutter: (0, 3),
            max_obstacles: 8,
            size_jitter: 0.0,
            obstacle_height: (2.0, 3.0),
            max_retries: 1000,
            camera: CameraConfig::default(),
            n_rays: 32,
            tracker_radius: 0.25,
            target_radius: 0.3,
            target_height: 1.7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub archetype: Archetype,
    pub world: World,
    /// Index into `world.obstacles` of the obstacle the target hides behind.
    pub chosen_obstacle: usize,
    pub target_edge: Edge,
    pub tracker_pose: Pose,
    pub target_pose: Pose,
    /// Visibility of the target from the tracker at spawn.
    pub visibility: f64,
}

/// Rigid map of the canonical layout into the room: optional mirror in x,
/// then a rotation by a multiple of a right angle, then a translation.
#[derive(Debug, Clone, Copy)]
struct Placement {
    mirror: bool,
    quarter_turns: u8,
    dx: f64,
    dy: f64,
}

impl Placement {
    fn point(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let x = if self.mirror { -x } else { x };
        let (x, y) = match self.quarter_turns % 4 {
            0 => (x, y),
            1 => (-y, x),
            2 => (-x, -y),
            _ => (y, -x),
        };
        (x + self.dx, y + self.dy)
    }

    fn rect(&self, r: &Rect) -> Rect {
        let (ax, ay) = self.point((r.min_x, r.min_y));
        let (bx, by) = self.point((r.max_x, r.max_y));
        Rect::new(ax, ay, bx, by)
    }

    fn edge(&self, e: Edge) -> Edge {
        // Canonical north is +y.
        let v = match e {
            Edge::North => (0.0, 1.0),
            Edge::East => (1.0, 0.0),
            Edge::South => (0.0, -1.0),
            Edge::West => (-1.0, 0.0),
        };
        let (x, y) = self.point(v);
        let (x, y) = (x - self.dx, y - self.dy);
        if y > 0.5 {
            Edge::North
        } else if x > 0.5 {
            Edge::East
        } else if y < -0.5 {
            Edge::South
        } else {
            Edge::West
        }
    }
}

struct Layout {
    rects: Vec<Rect>,
    target: (f64, f64),
    tracker: (f64, f64),
}

fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Canonical geometry: the chosen obstacle is centred at the origin, the
/// target stands off its north edge and the tracker off its east edge.
fn canonical(arch: Archetype, p: &ScenarioParams, rng: &mut Rng) -> Layout {
    let j = p.size_jitter;
    let size = |lo: f64, hi: f64, rng: &mut Rng| uniform(rng, lo, hi) * uniform(rng, 1.0 - j, 1.0 + j);
    let standoff = p.tracker_radius + 0.3;
    match arch {
        Archetype::SingleSide | Archetype::DoubleSide => {
            let a = size(0.5, 1.2, rng);
            let b = size(0.5, 1.2, rng);
            let mut rects = vec![Rect::new(-a, -b, a, b)];
            let target = (uniform(rng, -a, a - 0.2), b + p.target_radius + uniform(rng, 0.1, 0.6));
            let tracker = if arch == Archetype::SingleSide {
                (a + standoff + uniform(rng, 0.0, 1.3), uniform(rng, -b, b - 0.2))
            } else {
                let gap = uniform(rng, 1.1, 1.6);
                let w2 = size(0.4, 1.0, rng);
                let below = uniform(rng, 0.0, 0.5);
                let above = uniform(rng, 0.3, 1.0);
                rects.push(Rect::new(a + gap, -b - below, a + gap + w2, b + above));
                (a + gap / 2.0 + uniform(rng, -0.1, 0.1), uniform(rng, -b, b - 0.3))
            };
            Layout { rects, target, tracker }
        }
        Archetype::Corridor => {
            let half = uniform(rng, 0.6, 0.8);
            let wall = 0.3;
            let a = size(1.3, 1.8, rng).max(half + wall + 0.1);
            let b = size(0.5, 1.0, rng);
            let len = uniform(rng, 1.5, 2.5);
            let xt = uniform(rng, -a + half + wall, a - half - wall);
            let target = (xt, b + p.target_radius + uniform(rng, 0.1, 0.5));
            let rects = vec![
                Rect::new(-a, -b, a, b),
                Rect::new(xt - half - wall, b, xt - half, b + len),
                Rect::new(xt + half, b, xt + half + wall, b + len),
            ];
            let tracker = (a + standoff + uniform(rng, 0.0, 1.0), uniform(rng, -b, b - 0.2));
            Layout { rects, target, tracker }
        }
    }
}

fn bounding(rects: &[Rect], points: &[(f64, f64)]) -> Rect {
    let mut r = Rect::new(points[0].0, points[0].1, points[0].0, points[0].1);
    let mut grow = |x: f64, y: f64| {
        r = Rect::new(r.min_x.min(x), r.min_y.min(y), r.max_x.max(x), r.max_y.max(y));
    };
    for q in rects {
        grow(q.min_x, q.min_y);
        grow(q.max_x, q.max_y);
    }
    for &(x, y) in points {
        grow(x, y);
    }
    r
}

fn attempt(arch: Archetype, p: &ScenarioParams, rng: &mut Rng) -> Option<Scenario> {
    let layout = canonical(arch, p, rng);
    let bounds = Rect::new(0.0, 0.0, p.room_size, p.room_size);
    let mut place = Placement {
        mirror: rng.random::<bool>(),
        quarter_turns: rng.random_range(0..4),
        dx: 0.0,
        dy: 0.0,
    };
    let local = place.rect(&bounding(&layout.rects, &[layout.target, layout.tracker]));
    let margin = 0.8;
    let free_x = p.room_size - local.width() - 2.0 * margin;
    let free_y = p.room_size - local.height() - 2.0 * margin;
    if free_x <= 0.0 || free_y <= 0.0 {
        return None;
    }
    place.dx = margin - local.min_x + uniform(rng, 0.0, free_x);
    place.dy = margin - local.min_y + uniform(rng, 0.0, free_y);

    let height = |rng: &mut Rng| uniform(rng, p.obstacle_height.0, p.obstacle_height.1);
    let mut obstacles: Vec<Obstacle> = Vec::new();
    if p.max_obstacles > 0 {
        for r in layout.rects.iter().take(p.max_obstacles) {
            obstacles.push(Obstacle::new(place.rect(r), height(rng)));
        }
    }
    let (tx, ty) = place.point(layout.target);
    let (kx, ky) = place.point(layout.tracker);
    let site = place
        .rect(&bounding(&layout.rects, &[layout.target, layout.tracker]))
        .expanded(1.0);

    let n_clutter = rng.random_range(p.clutter.0..=p.clutter.1.max(p.clutter.0));
    let j = p.size_jitter;
    let mut tries = 0;
    while obstacles.len() < p.max_obstacles && obstacles.len() < layout.rects.len() + n_clutter && tries < 200 {
        tries += 1;
        let w = uniform(rng, 0.6, 1.5) * uniform(rng, 1.0 - j, 1.0 + j);
        let h = uniform(rng, 0.6, 1.5) * uniform(rng, 1.0 - j, 1.0 + j);
        if p.room_size <= w + 1.0 || p.room_size <= h + 1.0 {
            break;
        }
        let x = uniform(rng, 0.5, p.room_size - 0.5 - w);
        let y = uniform(rng, 0.5, p.room_size - 0.5 - h);
        let r = Rect::new(x, y, x + w, y + h);
        if r.overlaps(&site) || obstacles.iter().any(|o| o.footprint.expanded(1.0).overlaps(&r)) {
            continue;
        }
        obstacles.push(Obstacle::new(r, height(rng)));
    }

    let free = |x: f64, y: f64, r: f64| crate::sim::world::disc_is_free(&bounds, &obstacles, x, y, r);
    if !free(tx, ty, p.target_radius) || !free(kx, ky, p.tracker_radius) {
        return None;
    }
    let yaw = (ty - ky).atan2(tx - kx) + uniform(rng, -0.15, 0.15);
    let tracker_pose = Pose::new(kx, ky, yaw);
    let target_pose = Pose::new(tx, ty, uniform(rng, -std::f64::consts::PI, std::f64::consts::PI));
    let camera = p.camera.at(tracker_pose);
    let vis = visibility(&obstacles, &camera, tx, ty, p.target_radius, p.target_height, p.n_rays);
    // Fully visible targets make no planning problem.
    if vis >= 1.0 {
        return None;
    }
    let mut target = Entity::new(target_pose, 0, Behavior::Static, 0.0);
    target.radius = p.target_radius;
    target.height = p.target_height;
    let world = World::new(
        bounds,
        obstacles,
        Tracker {
            pose: tracker_pose,
            radius: p.tracker_radius,
        },
        vec![target],
        crate::rng::seeded(0),
    );
    Some(Scenario {
        archetype: arch,
        world,
        chosen_obstacle: 0,
        target_edge: place.edge(Edge::North),
        tracker_pose,
        target_pose,
        visibility: vis,
    })
}

/// Rejection-samples a scenario of the given archetype.
pub fn sample_scenario(arch: Archetype, rng: &mut Rng, params: &ScenarioParams) -> Result<Scenario> {
    for _ in 0..params.max_retries {
        if let Some(s) = attempt(arch, params, rng) {
            return Ok(s);
        }
    }
    Err(Error::SamplingExhausted(params.max_retries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::sim::cast_silhouette;

    fn blockers(s: &Scenario) -> usize {
        let cam = CameraConfig::default().at(s.tracker_pose);
        let (tx, ty) = s.target_pose.position();
        let full = cast_silhouette(&[], &cam, tx, ty, 0.3, 1.7, 32).fraction;
        s.world
            .obstacles
            .iter()
            .filter(|o| cast_silhouette(std::slice::from_ref(*o), &cam, tx, ty, 0.3, 1.7, 32).fraction < full)
            .count()
    }

    #[test]
    fn every_archetype_is_partially_occluded() {
        let p = ScenarioParams::default();
        for arch in ARCHETYPES {
            for seed in 0..30 {
                let s = sample_scenario(arch, &mut rng::seeded(seed), &p).unwrap();
                assert!(s.visibility < 1.0);
                let o = &s.world.obstacles[s.chosen_obstacle].footprint;
                let (tx, ty) = s.target_pose.position();
                // The target hugs the recorded edge of the chosen obstacle.
                match s.target_edge {
                    Edge::North => assert!(ty > o.max_y && tx >= o.min_x - 1e-9 && tx <= o.max_x + 1e-9),
                    Edge::South => assert!(ty < o.min_y && tx >= o.min_x - 1e-9 && tx <= o.max_x + 1e-9),
                    Edge::East => assert!(tx > o.max_x && ty >= o.min_y - 1e-9 && ty <= o.max_y + 1e-9),
                    Edge::West => assert!(tx < o.min_x && ty >= o.min_y - 1e-9 && ty <= o.max_y + 1e-9),
                }
                assert!(o.distance(tx, ty) < 1.0);
                assert!(o.distance(s.tracker_pose.x, s.tracker_pose.y) < 2.0);
            }
        }
    }

    #[test]
    fn single_side_has_one_occluder() {
        let p = ScenarioParams::default();
        for seed in 0..30 {
            let s = sample_scenario(Archetype::SingleSide, &mut rng::seeded(seed), &p).unwrap();
            assert_eq!(blockers(&s), 1);
        }
    }

    #[test]
    fn corridor_walls_surround_the_target() {
        let p = ScenarioParams::default();
        for seed in 0..30 {
            let s = sample_scenario(Archetype::Corridor, &mut rng::seeded(seed), &p).unwrap();
            let (tx, ty) = s.target_pose.position();
            let around = s.world.obstacles.iter().take(3).filter(|o| o.footprint.distance(tx, ty) < 1.2).count();
            assert_eq!(around, 3);
            // Left and right walls sit on opposite sides of the target.
            let side = |o: &Obstacle| {
                let (cx, cy) = o.footprint.center();
                let rear = s.world.obstacles[0].footprint.center();
                (cx - tx) * (rear.1 - ty) - (cy - ty) * (rear.0 - tx)
            };
            assert!(side(&s.world.obstacles[1]) * side(&s.world.obstacles[2]) < 0.0);
        }
    }

    #[test]
    fn no_obstacles_exhausts() {
        let p = ScenarioParams {
            max_obstacles: 0,
            max_retries: 50,
            ..ScenarioParams::default()
        };
        let r = sample_scenario(Archetype::SingleSide, &mut rng::seeded(1), &p);
        assert!(matches!(r, Err(Error::SamplingExhausted(50))));
    }

    #[test]
    fn deterministic_in_the_seed() {
        let p = ScenarioParams::default();
        let a = sample_scenario(Archetype::DoubleSide, &mut rng::seeded(4), &p).unwrap();
        let b = sample_scenario(Archetype::DoubleSide, &mut rng::seeded(4), &p).unwrap();
        assert_eq!(a.world.obstacles, b.world.obstacles);
        assert_eq!(a.tracker_pose, b.tracker_pose);
    }
}
