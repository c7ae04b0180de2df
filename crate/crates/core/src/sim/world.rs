//! World state, entity behaviours and the per-step dynamics.

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::geometry::{wrap_angle, Obstacle, Pose, Rect};
use super::occupancy::{Cell, OccupancyGrid};
use crate::dataset::astar;
use crate::rng::Rng;

/// Planar velocity command: metres and radians per step.
///
/// `omega_y > 0` turns right and `v_l > 0` moves right, so a target on the
/// right of the image calls for positive values of both.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub v_f: f64,
    pub v_l: f64,
    pub v_v: f64,
    pub omega_y: f64,
}

impl Action {
    pub const ZERO: Action = Action {
        v_f: 0.0,
        v_l: 0.0,
        v_v: 0.0,
        omega_y: 0.0,
    };

    pub fn new(v_f: f64, v_l: f64, omega_y: f64) -> Self {
        Self {
            v_f,
            v_l,
            v_v: 0.0,
            omega_y,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.v_f, self.v_l, self.v_v, self.omega_y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionLimits {
    pub max_linear: f64,
    pub max_yaw: f64,
}

impl Default for ActionLimits {
    fn default() -> Self {
        Self {
            max_linear: 0.4,
            max_yaw: 0.2,
        }
    }
}

impl ActionLimits {
    /// Clamps every component; the vertical velocity is always zero here.
    pub fn clamp(&self, a: Action) -> Action {
        let c = |v: f64, m: f64| if v.is_finite() { v.clamp(-m, m) } else { 0.0 };
        Action {
            v_f: c(a.v_f, self.max_linear),
            v_l: c(a.v_l, self.max_linear),
            v_v: 0.0,
            omega_y: c(a.omega_y, self.max_yaw),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaderParams {
    /// Steps spent hiding once the hide point is reached.
    pub dwell: (u32, u32),
    /// Steps of ordinary wandering between hides.
    pub roam: (u32, u32),
    /// Extra distance kept between the hide point and the obstacle.
    pub standoff: f64,
}

impl Default for EvaderParams {
    fn default() -> Self {
        Self {
            dwell: (60, 100),
            roam: (30, 60),
            standoff: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Behavior {
    Static,
    /// Walks A* paths to random goals.
    Wanderer,
    /// Alternates wandering with hiding behind the nearest obstacle as seen
    /// from the tracker.
    Evader(EvaderParams),
    /// Follows a fixed per-step pose list, holding the last pose.
    Scripted(Vec<Pose>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
enum Phase {
    #[default]
    Roam,
    Hide,
    Dwell,
}

#[derive(Debug, Clone, Default)]
struct NavState {
    path: Vec<(f64, f64)>,
    cursor: usize,
    phase: Phase,
    timer: u32,
}

#[derive(Debug, Clone)]
pub struct Entity {
    pub pose: Pose,
    pub radius: f64,
    pub height: f64,
    pub instance_id: u32,
    pub category: String,
    pub behavior: Behavior,
    /// Metres per step.
    pub speed: f64,
    nav: NavState,
}

impl Entity {
    pub fn new(pose: Pose, instance_id: u32, behavior: Behavior, speed: f64) -> Self {
        Self {
            pose,
            radius: 0.3,
            height: 1.7,
            instance_id,
            category: "person".into(),
            behavior,
            speed,
            nav: NavState::default(),
        }
    }

    /// Whether an evader is currently running to or sitting at a hide point.
    pub fn is_hiding(&self) -> bool {
        self.nav.phase != Phase::Roam
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tracker {
    pub pose: Pose,
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct World {
    pub bounds: Rect,
    pub obstacles: Vec<Obstacle>,
    pub entities: Vec<Entity>,
    pub tracker: Tracker,
    pub time_step: u64,
    /// Index into `entities` of the tracked target.
    pub target: usize,
    pub limits: ActionLimits,
    nav: Arc<OccupancyGrid>,
    rng: Rng,
}

/// Resolution of the grid entities navigate on.
pub const NAV_RESOLUTION: f64 = 0.25;

impl World {
    pub fn new(bounds: Rect, obstacles: Vec<Obstacle>, tracker: Tracker, entities: Vec<Entity>, rng: Rng) -> Self {
        let clearance = entities.iter().map(|e| e.radius).fold(0.3, f64::max) + 0.1;
        let nav = OccupancyGrid::clearance(&bounds, &obstacles, NAV_RESOLUTION, clearance);
        Self {
            bounds,
            obstacles,
            entities,
            tracker,
            time_step: 0,
            target: 0,
            limits: ActionLimits::default(),
            nav: Arc::new(nav),
            rng,
        }
    }

    pub fn target(&self) -> &Entity {
        &self.entities[self.target]
    }

    pub fn nav_grid(&self) -> &OccupancyGrid {
        &self.nav
    }

    /// Whether a disc fits inside the bounds without touching an obstacle.
    pub fn disc_is_free(&self, x: f64, y: f64, r: f64) -> bool {
        disc_is_free(&self.bounds, &self.obstacles, x, y, r)
    }
}

pub fn disc_is_free(bounds: &Rect, obstacles: &[Obstacle], x: f64, y: f64, r: f64) -> bool {
    x - r >= bounds.min_x
        && x + r <= bounds.max_x
        && y - r >= bounds.min_y
        && y + r <= bounds.max_y
        && obstacles.iter().all(|o| o.footprint.distance(x, y) >= r)
}

/// Moves a disc by `(dx, dy)` without letting it enter an obstacle or leave
/// the bounds. Blocked motion stops at contact and then slides along the
/// free axis.
pub fn move_disc(bounds: &Rect, obstacles: &[Obstacle], from: (f64, f64), r: f64, delta: (f64, f64)) -> (f64, f64) {
    let free = |p: (f64, f64)| disc_is_free(bounds, obstacles, p.0, p.1, r);
    if !free(from) {
        let to = (from.0 + delta.0, from.1 + delta.1);
        return if free(to) { to } else { from };
    }
    let len = delta.0.hypot(delta.1);
    if len == 0.0 {
        return from;
    }
    let pieces = (len / (r / 2.0)).ceil().max(1.0) as usize;
    let piece = (delta.0 / pieces as f64, delta.1 / pieces as f64);
    let mut cur = from;
    for k in 0..pieces {
        let next = (cur.0 + piece.0, cur.1 + piece.1);
        if free(next) {
            cur = next;
            continue;
        }
        let advance = |cur: (f64, f64), d: (f64, f64)| {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if free((cur.0 + mid * d.0, cur.1 + mid * d.1)) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            (cur.0 + lo * d.0, cur.1 + lo * d.1)
        };
        cur = advance(cur, piece);
        let remaining = (pieces - k) as f64;
        let rest = (piece.0 * remaining, piece.1 * remaining);
        cur = advance(cur, (rest.0, 0.0));
        cur = advance(cur, (0.0, rest.1));
        break;
    }
    cur
}

/// Advances the world by one step: integrates the tracker action in the body
/// frame, resolves collisions, then moves every entity.
pub fn step_world(world: &mut World, action: &Action, dt: f64) {
    let a = world.limits.clamp(*action);
    let pose = world.tracker.pose;
    let (s, c) = pose.yaw.sin_cos();
    // Forward along the heading; lateral positive to the right.
    let dx = (a.v_f * c + a.v_l * s) * dt;
    let dy = (a.v_f * s - a.v_l * c) * dt;
    let (x, y) = move_disc(&world.bounds, &world.obstacles, pose.position(), world.tracker.radius, (dx, dy));
    world.tracker.pose = Pose::new(x, y, wrap_angle(pose.yaw - a.omega_y * dt));

    let t = world.time_step as usize + 1;
    for i in 0..world.entities.len() {
        step_entity(world, i, t, dt);
    }
    world.time_step += 1;
}

fn step_entity(world: &mut World, i: usize, t: usize, dt: f64) {
    let behavior = world.entities[i].behavior.clone();
    match behavior {
        Behavior::Static => {}
        Behavior::Scripted(poses) => {
            if let Some(p) = poses.get(t).or(poses.last()) {
                world.entities[i].pose = *p;
            }
        }
        Behavior::Wanderer => {
            if world.entities[i].nav.cursor >= world.entities[i].nav.path.len() {
                plan_random_goal(world, i);
            }
            follow_path(world, i, dt);
        }
        Behavior::Evader(params) => step_evader(world, i, &params, dt),
    }
}

fn random_range(rng: &mut Rng, (lo, hi): (u32, u32)) -> u32 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn step_evader(world: &mut World, i: usize, p: &EvaderParams, dt: f64) {
    let phase = world.entities[i].nav.phase;
    match phase {
        Phase::Roam => {
            if world.entities[i].nav.timer == 0 {
                world.entities[i].nav.timer = random_range(&mut world.rng, p.roam);
            }
            world.entities[i].nav.timer -= 1;
            if world.entities[i].nav.timer == 0 && plan_hide(world, i, p.standoff) {
                world.entities[i].nav.phase = Phase::Hide;
            } else {
                if world.entities[i].nav.cursor >= world.entities[i].nav.path.len() {
                    plan_random_goal(world, i);
                }
                follow_path(world, i, dt);
            }
        }
        Phase::Hide => {
            // Re-aim every few steps, since the tracker keeps moving.
            world.entities[i].nav.timer += 1;
            if world.entities[i].nav.timer % 10 == 0 {
                plan_hide(world, i, p.standoff);
            }
            follow_path(world, i, dt);
            if world.entities[i].nav.cursor >= world.entities[i].nav.path.len() {
                world.entities[i].nav.phase = Phase::Dwell;
                world.entities[i].nav.timer = random_range(&mut world.rng, p.dwell);
            }
        }
        Phase::Dwell => {
            let nav = &mut world.entities[i].nav;
            nav.timer = nav.timer.saturating_sub(1);
            if nav.timer == 0 {
                nav.phase = Phase::Roam;
                nav.path.clear();
                nav.cursor = 0;
            }
        }
    }
}

/// Nearest free navigation cell to a world point (breadth-first ring search).
fn nearest_free_cell(nav: &OccupancyGrid, x: f64, y: f64) -> Option<Cell> {
    let (fx, fy) = (
        ((x - nav.origin.0) / nav.resolution).floor() as i64,
        ((y - nav.origin.1) / nav.resolution).floor() as i64,
    );
    let max_r = nav.width.max(nav.height) as i64;
    for r in 0..=max_r {
        let mut best: Option<(f64, Cell)> = None;
        for ix in fx - r..=fx + r {
            for iy in fy - r..=fy + r {
                if (ix - fx).abs() != r && (iy - fy).abs() != r {
                    continue;
                }
                if ix < 0 || iy < 0 {
                    continue;
                }
                let c = (ix as usize, iy as usize);
                if nav.is_free(c) {
                    let (cx, cy) = nav.cell_center_world(c);
                    let d = (cx - x).hypot(cy - y);
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, c));
                    }
                }
            }
        }
        if let Some((_, c)) = best {
            return Some(c);
        }
    }
    None
}

fn set_path_to(world: &mut World, i: usize, goal: Cell) -> bool {
    let nav = world.nav.clone();
    let e = &world.entities[i];
    let Some(start) = nearest_free_cell(&nav, e.pose.x, e.pose.y) else {
        return false;
    };
    match astar::astar(&nav, start, goal) {
        Ok(cells) => {
            let e = &mut world.entities[i];
            e.nav.path = cells.into_iter().skip(1).map(|c| nav.cell_center_world(c)).collect();
            e.nav.cursor = 0;
            true
        }
        Err(_) => false,
    }
}

fn plan_random_goal(world: &mut World, i: usize) {
    let nav = world.nav.clone();
    for _ in 0..20 {
        let c = (world.rng.random_range(0..nav.width), world.rng.random_range(0..nav.height));
        if nav.is_free(c) && set_path_to(world, i, c) {
            return;
        }
    }
}

/// Hide point behind the obstacle nearest to entity `i`, on the side facing
/// away from the tracker.
pub fn hide_point(world: &World, i: usize, standoff: f64) -> Option<(f64, f64)> {
    let e = &world.entities[i];
    let o = world
        .obstacles
        .iter()
        .min_by(|a, b| {
            a.footprint
                .distance(e.pose.x, e.pose.y)
                .total_cmp(&b.footprint.distance(e.pose.x, e.pose.y))
        })?;
    let (ox, oy) = o.footprint.center();
    let (tx, ty) = world.tracker.pose.position();
    let (dx, dy) = (ox - tx, oy - ty);
    let d = dx.hypot(dy);
    if d < 1e-9 {
        return None;
    }
    let (ux, uy) = (dx / d, dy / d);
    let (a, b) = (o.footprint.width() / 2.0, o.footprint.height() / 2.0);
    let to_edge = (a / ux.abs().max(1e-12)).min(b / uy.abs().max(1e-12));
    let reach = to_edge + e.radius + standoff;
    Some((ox + ux * reach, oy + uy * reach))
}

fn plan_hide(world: &mut World, i: usize, standoff: f64) -> bool {
    let Some((x, y)) = hide_point(world, i, standoff) else {
        return false;
    };
    let Some(goal) = nearest_free_cell(&world.nav, x, y) else {
        return false;
    };
    set_path_to(world, i, goal)
}

fn follow_path(world: &mut World, i: usize, dt: f64) {
    let (bounds, obstacles) = (world.bounds, &world.obstacles);
    let e = &mut world.entities[i];
    let mut budget = e.speed * dt;
    while budget > 1e-12 && e.nav.cursor < e.nav.path.len() {
        let (wx, wy) = e.nav.path[e.nav.cursor];
        let (dx, dy) = (wx - e.pose.x, wy - e.pose.y);
        let d = dx.hypot(dy);
        if d < 1e-9 {
            e.nav.cursor += 1;
            continue;
        }
        let stepl = d.min(budget);
        let (nx, ny) = move_disc(&bounds, obstacles, e.pose.position(), e.radius, (dx / d * stepl, dy / d * stepl));
        let moved = (nx - e.pose.x).hypot(ny - e.pose.y);
        e.pose = Pose::new(nx, ny, dy.atan2(dx));
        budget -= stepl;
        if moved + 1e-9 < stepl {
            // Blocked; drop the path and replan next step.
            e.nav.path.clear();
            e.nav.cursor = 0;
            break;
        }
        if stepl >= d {
            e.nav.cursor += 1;
        }
    }
}

/// Reward for keeping the target at `d_star` straight ahead.
pub fn reward(tracker: &Pose, target: &Pose, d_star: f64, d_max: f64, theta_max: f64) -> f64 {
    let d = tracker.distance_to(target);
    let theta = tracker.bearing_to(target.x, target.y);
    (1.0 - (d - d_star).abs() / d_max - theta.abs() / theta_max).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn world(obstacles: Vec<Obstacle>, entities: Vec<Entity>) -> World {
        World::new(
            Rect::new(0.0, 0.0, 10.0, 10.0),
            obstacles,
            Tracker {
                pose: Pose::new(2.0, 5.0, 0.0),
                radius: 0.25,
            },
            entities,
            rng::seeded(1),
        )
    }

    #[test]
    fn zero_action_static_world_only_ticks() {
        let mut w = world(vec![], vec![Entity::new(Pose::new(5.0, 5.0, 0.0), 0, Behavior::Static, 0.2)]);
        let before = (w.tracker, w.entities[0].pose);
        step_world(&mut w, &Action::ZERO, 1.0);
        assert_eq!((w.tracker, w.entities[0].pose), before);
        assert_eq!(w.time_step, 1);
    }

    #[test]
    fn forward_and_lateral_integration() {
        let mut w = world(vec![], vec![]);
        w.limits.max_linear = 2.0;
        step_world(&mut w, &Action::new(1.0, 0.0, 0.0), 1.0);
        assert!((w.tracker.pose.x - 3.0).abs() < 1e-12 && (w.tracker.pose.y - 5.0).abs() < 1e-12);
        step_world(&mut w, &Action::new(0.0, 1.0, 0.0), 1.0);
        assert!((w.tracker.pose.y - 4.0).abs() < 1e-12, "positive lateral moves right");
        step_world(&mut w, &Action::new(0.0, 0.0, 0.1), 1.0);
        assert!((w.tracker.pose.yaw + 0.1).abs() < 1e-12, "positive yaw turns right");
    }

    #[test]
    fn driving_into_a_wall_stops_at_contact() {
        let wall = Obstacle::new(Rect::new(3.0, 0.0, 3.5, 10.0), 2.0);
        let mut w = world(vec![wall], vec![]);
        for _ in 0..10 {
            step_world(&mut w, &Action::new(0.4, 0.0, 0.0), 1.0);
        }
        let x = w.tracker.pose.x;
        assert!(x <= 3.0 - 0.25 + 1e-12);
        assert!(x > 3.0 - 0.25 - 1e-6);
    }

    #[test]
    fn actions_are_clamped() {
        let a = ActionLimits::default().clamp(Action {
            v_f: 3.0,
            v_l: -3.0,
            v_v: 1.0,
            omega_y: f64::NAN,
        });
        assert_eq!(a, Action::new(0.4, -0.4, 0.0));
    }

    #[test]
    fn reward_examples() {
        let t = Pose::new(0.0, 0.0, 0.0);
        assert_eq!(reward(&t, &Pose::new(2.5, 0.0, 0.0), 2.5, 5.0, 0.8), 1.0);
        assert!(reward(&t, &Pose::new(7.5, 0.0, 0.0), 2.5, 5.0, 0.8).abs() < 1e-12);
        let half = std::f64::consts::FRAC_PI_8;
        let p = Pose::new(2.5 * half.cos(), 2.5 * half.sin(), 0.0);
        assert!((reward(&t, &p, 2.5, 5.0, std::f64::consts::FRAC_PI_4) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn wanderers_stay_out_of_obstacles() {
        let obs = vec![
            Obstacle::new(Rect::new(4.0, 4.0, 6.0, 6.0), 2.0),
            Obstacle::new(Rect::new(1.0, 7.0, 3.0, 8.0), 2.0),
        ];
        let ents = (0..3)
            .map(|k| Entity::new(Pose::new(8.0, 2.0 + 2.0 * k as f64, 0.0), k, Behavior::Wanderer, 0.3))
            .collect();
        let mut w = world(obs, ents);
        let mut moved = 0.0;
        for _ in 0..300 {
            let before = w.entities[0].pose;
            step_world(&mut w, &Action::ZERO, 1.0);
            moved += before.distance_to(&w.entities[0].pose);
            for e in &w.entities {
                assert!(w.disc_is_free(e.pose.x, e.pose.y, e.radius));
            }
        }
        assert!(moved > 10.0);
    }

    #[test]
    fn evader_ends_up_hidden() {
        let obs = vec![Obstacle::new(Rect::new(5.0, 4.0, 6.0, 6.0), 2.5)];
        let p = EvaderParams {
            dwell: (1000, 1000),
            roam: (1, 1),
            standoff: 0.3,
        };
        let mut w = world(obs, vec![Entity::new(Pose::new(4.0, 7.0, 0.0), 0, Behavior::Evader(p), 0.3)]);
        for _ in 0..200 {
            step_world(&mut w, &Action::ZERO, 1.0);
        }
        let e = &w.entities[0];
        assert!(e.is_hiding());
        assert!(e.pose.x > 6.0, "hides on the far side: {:?}", e.pose);
    }
}
