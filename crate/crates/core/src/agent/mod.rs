//! The closed-loop tracker: detection by prototype matching, filtered
//! pursuit, and planned recovery when the target stays out of reach.

mod config;
mod pid;

use std::sync::Arc;

use serde::Serialize;

pub use config::{AgentConfig, Variant, VARIANTS};
pub use pid::{height_setpoint, pid_control, Pid};

use crate::dataset::{normalize_bbox, trajectory_collision_free};
use crate::estimator::{self, KfConfig, KfState, Measurement, NoiseModel};
use crate::features::{ema_update, average_update, init_prototype, match_candidates, FeatureVector, Prototype};
use crate::planner::{build_schedule, sample_plan, unflatten, Checkpoint, NoiseSchedule, PurePursuit, PursuitConfig};
use crate::rng;
use crate::sim::{wrap_angle, Action, ActionLimits, CameraConfig, EpisodeSetup, Observation, OccupancyGrid, Policy, Pose, CROP_CELLS, CROP_RESOLUTION};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Mode {
    Detect,
    Track,
    Plan,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Detect => "DETECT",
            Mode::Track => "TRACK",
            Mode::Plan => "PLAN",
        }
    }
}

/// A trained noise predictor with its schedule, shared across episodes.
#[derive(Debug)]
pub struct PlannerHandle {
    pub checkpoint: Checkpoint,
    pub schedule: NoiseSchedule,
}

impl PlannerHandle {
    pub fn new(checkpoint: Checkpoint) -> Result<Self> {
        let c = checkpoint.model.config;
        let cond = CROP_CELLS * CROP_CELLS + 4;
        if c.cond_dim != cond {
            return Err(Error::DimensionMismatch {
                expected: cond,
                got: c.cond_dim,
            });
        }
        if c.traj_dim != 2 * checkpoint.horizon {
            return Err(Error::DimensionMismatch {
                expected: 2 * checkpoint.horizon,
                got: c.traj_dim,
            });
        }
        let schedule = build_schedule(checkpoint.k)?;
        Ok(Self { checkpoint, schedule })
    }
}

#[derive(Debug, Clone)]
pub struct ActivePlan {
    pub trajectory: Vec<[f64; 2]>,
    pursuit: PurePursuit,
    pub ticks: usize,
}

#[derive(Debug, Clone)]
pub struct AgentState {
    pub mode: Mode,
    pub prototype: Prototype,
    pub kf: Option<KfState>,
    pub lost_count: usize,
    pub active_plan: Option<ActivePlan>,
    pub last_box: Option<[f64; 4]>,
    /// Dead-reckoned tracker pose since planning began.
    odom: Pose,
    /// Where the target was believed to be when planning began, in the
    /// odometry frame.
    target_estimate: Option<(f64, f64)>,
    replans_left: usize,
}

/// Reference feature plus augmentations to a fresh DETECT state.
pub fn initialize(ref_views: &[FeatureVector]) -> Result<AgentState> {
    let (reference, augmented) = ref_views
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("need at least the reference view".into()))?;
    let augmented = if augmented.is_empty() { ref_views } else { augmented };
    Ok(AgentState {
        mode: Mode::Detect,
        prototype: init_prototype(reference, augmented)?,
        kf: None,
        lost_count: 0,
        active_plan: None,
        last_box: None,
        odom: Pose::default(),
        target_estimate: None,
        replans_left: 0,
    })
}

/// Ground-plane position, in the camera frame, of a standing target that
/// produces `bbox`.
pub fn position_from_box(bbox: &[f64; 4], camera: &CameraConfig, target_height: f64) -> (f64, f64) {
    let f = camera.focal();
    let range = f * target_height / bbox[3].max(1.0);
    let bearing = ((camera.image_w / 2.0 - bbox[0]) / f).atan();
    (range * bearing.cos(), range * bearing.sin())
}

/// Box a standing target at a camera-frame position would produce, with the
/// centre clamped into the image so it stays a valid planner condition.
pub fn box_from_position(fwd: f64, left: f64, camera: &CameraConfig, cfg: &AgentConfig) -> [f64; 4] {
    let f = camera.focal();
    let depth = fwd.max(0.5);
    let range = fwd.hypot(left).max(0.5);
    let cx = (camera.image_w / 2.0 - f * left / depth).clamp(0.0, camera.image_w);
    let h = f * cfg.target_height / range;
    let top = camera.image_h / 2.0 - f * (cfg.target_height - camera.cam_height) / range;
    [cx, top + h / 2.0, 2.0 * f * cfg.target_radius / range, h]
}

/// Moves a box to where the same standing target appears after the camera
/// executes `a`; size scales with the implied range.
pub fn ego_shift(bbox: &[f64; 4], a: &Action, camera: &CameraConfig, cfg: &AgentConfig) -> [f64; 4] {
    let (fwd, left) = position_from_box(bbox, camera, cfg.target_height);
    let (f2, l2) = integrate(&Pose::default(), a).to_local(fwd, left);
    let moved = box_from_position(f2, l2, camera, cfg);
    let scale = fwd.hypot(left) / f2.hypot(l2).max(0.5);
    [moved[0], bbox[1] + (moved[1] - bbox[1]), bbox[2] * scale, moved[3]]
}

fn crop_grid(occupancy: &[f64]) -> OccupancyGrid {
    let mut g = OccupancyGrid::egocentric(Pose::default(), CROP_CELLS, CROP_CELLS, CROP_RESOLUTION);
    for (o, &v) in g.occupied.iter_mut().zip(occupancy) {
        *o = v > 0.5;
    }
    g
}

fn integrate(pose: &Pose, a: &Action) -> Pose {
    let (s, c) = pose.yaw.sin_cos();
    Pose::new(
        pose.x + a.v_f * c + a.v_l * s,
        pose.y + a.v_f * s - a.v_l * c,
        wrap_angle(pose.yaw - a.omega_y),
    )
}

pub struct Agent {
    pub config: AgentConfig,
    pub variant: Variant,
    planner: Option<Arc<PlannerHandle>>,
    kf_config: KfConfig,
    camera: CameraConfig,
    limits: ActionLimits,
    seed: u64,
    plans_drawn: u64,
    pid: Pid,
    last_action: Action,
    state: Option<AgentState>,
    transitions: Vec<(Mode, Mode)>,
}

impl Agent {
    pub fn new(config: AgentConfig, variant: Variant, planner: Option<Arc<PlannerHandle>>) -> Result<Self> {
        config.validate()?;
        if variant.uses_planner() && planner.is_none() {
            return Err(Error::InvalidArgument(format!("variant {variant} needs a planner checkpoint")));
        }
        let mut kf_config = KfConfig::new(config.lambda, config.gamma, config.eta_c, config.process_noise);
        if variant == Variant::LinearKf {
            kf_config = kf_config.with_noise(NoiseModel::Fixed(config.fixed_noise));
            kf_config.eta_c = 0.0;
        }
        Ok(Self {
            config,
            variant,
            planner: if variant.uses_planner() { planner } else { None },
            kf_config,
            camera: CameraConfig::default(),
            limits: ActionLimits::default(),
            seed: 0,
            plans_drawn: 0,
            pid: Pid::default(),
            last_action: Action::ZERO,
            state: None,
            transitions: Vec::new(),
        })
    }

    pub fn state(&self) -> Option<&AgentState> {
        self.state.as_ref()
    }

    /// Every mode change since the last reset, in order.
    pub fn transitions(&self) -> &[(Mode, Mode)] {
        &self.transitions
    }

    fn enhance(&self, p: &Prototype, feature: &FeatureVector) -> Prototype {
        match self.variant {
            Variant::NoEma => p.clone(),
            Variant::AvgUpdate => average_update(p, feature),
            _ => ema_update(p, feature, self.config.beta),
        }
    }

    fn draw_plan(&mut self, obs: &Observation, bbox: &[f64; 4]) -> Result<Vec<[f64; 2]>> {
        let planner = self.planner.clone().ok_or_else(|| Error::InvalidArgument("no planner".into()))?;
        let mut cond = obs.occupancy.clone();
        if self.variant == Variant::PlannerNoBbox {
            cond.extend_from_slice(&[0.0; 4]);
        } else {
            cond.extend_from_slice(&normalize_bbox(*bbox, &self.camera));
        }
        let grid = crop_grid(&obs.occupancy);
        let radius = PursuitConfig::default().plan_radius;
        let model = &planner.checkpoint.model;
        let mut plan = Vec::new();
        for _ in 0..self.config.plan_draws {
            let seed = rng::derive_seed(self.seed, &[0x91a, self.plans_drawn]);
            self.plans_drawn += 1;
            plan = unflatten(&sample_plan(model, &cond, model.config.traj_dim, &planner.schedule, seed)?);
            if trajectory_collision_free(&grid, &plan, radius) {
                break;
            }
        }
        Ok(plan)
    }

    fn start_plan(&mut self, st: &mut AgentState, obs: &Observation, bbox: &[f64; 4]) -> Result<()> {
        let trajectory = self.draw_plan(obs, bbox)?;
        let cfg = PursuitConfig {
            lookahead: self.config.lookahead,
            limits: self.limits,
            ..PursuitConfig::default()
        };
        st.active_plan = Some(ActivePlan {
            pursuit: PurePursuit::new(&trajectory, cfg),
            trajectory,
            ticks: 0,
        });
        Ok(())
    }

    fn search(&self, st: &AgentState) -> Action {
        // Turn toward wherever the target was last believed to be.
        let side = match (st.target_estimate, st.last_box) {
            (Some((x, y)), _) => -st.odom.bearing_to(x, y).signum(),
            (None, Some(b)) => (b[0] - self.camera.image_w / 2.0).signum(),
            _ => 1.0,
        };
        let side = if side == 0.0 { 1.0 } else { side };
        self.limits.clamp(Action::new(0.0, 0.0, side * self.config.search_rate))
    }

    fn acquire(&mut self, st: &mut AgentState, bbox: [f64; 4]) -> Action {
        st.kf = (self.variant != Variant::NoKf).then(|| KfState::from_box(bbox));
        st.lost_count = 0;
        st.last_box = Some(bbox);
        st.active_plan = None;
        st.target_estimate = None;
        self.pid.reset();
        self.pid.control(&bbox, &self.camera, &self.config, &self.limits)
    }

    fn step(&mut self, st: &mut AgentState, obs: &Observation) -> Result<Action> {
        self.camera = obs.camera;
        let feats: Vec<FeatureVector> = obs.candidates.iter().map(|c| c.feature.clone()).collect();
        let matched = match_candidates(&st.prototype, &feats, self.config.eta_s).map(|i| &obs.candidates[i]);
        match st.mode {
            Mode::Detect => match matched {
                Some(c) => {
                    st.mode = Mode::Track;
                    Ok(self.acquire(st, c.bbox))
                }
                None => Ok(self.search(st)),
            },
            Mode::Track => {
                let meas = matched.map(|c| Measurement {
                    z: c.bbox,
                    confidence: c.confidence,
                });
                let confident = meas.is_some_and(|m| m.confidence >= self.config.eta_c);
                let bbox = match st.kf {
                    Some(mut kf) => {
                        // The filter runs in image coordinates, so first undo
                        // the camera's own motion since the last frame.
                        let shifted = ego_shift(&kf.bbox(), &self.last_action, &self.camera, &self.config);
                        for (i, v) in shifted.iter().enumerate() {
                            kf.x[i] = *v;
                        }
                        let out = estimator::step(&kf, meas.as_ref(), &self.kf_config)?;
                        st.kf = Some(out.state);
                        Some(out.predicted_box)
                    }
                    // Without a filter there is nothing to extrapolate.
                    None => meas.map(|m| m.z),
                };
                if confident {
                    let c = matched.expect("confident implies matched");
                    st.prototype = self.enhance(&st.prototype, &c.feature);
                    st.lost_count = 0;
                } else {
                    st.lost_count += 1;
                }
                if bbox.is_some() {
                    st.last_box = bbox;
                }
                if st.lost_count > self.config.trigger_len && self.planner.is_some() {
                    let bbox = st.last_box.expect("set on acquisition");
                    st.mode = Mode::Plan;
                    st.odom = Pose::default();
                    st.target_estimate = Some(position_from_box(&bbox, &self.camera, self.config.target_height));
                    st.replans_left = self.config.replan_budget;
                    self.start_plan(st, obs, &bbox)?;
                    return self.follow_plan(st);
                }
                match bbox {
                    Some(b) => Ok(self.pid.control(&b, &self.camera, &self.config, &self.limits)),
                    None => {
                        self.pid.reset();
                        Ok(Action::ZERO)
                    }
                }
            }
            Mode::Plan => {
                if let Some(c) = matched {
                    st.mode = Mode::Track;
                    return Ok(self.acquire(st, c.bbox));
                }
                let exhausted = st
                    .active_plan
                    .as_ref()
                    .map_or(true, |p| p.ticks >= self.config.plan_exec_len || p.pursuit.finished());
                if exhausted {
                    if st.replans_left == 0 {
                        st.mode = Mode::Detect;
                        st.kf = None;
                        st.active_plan = None;
                        return Ok(self.search(st));
                    }
                    st.replans_left -= 1;
                    let (x, y) = st.target_estimate.unwrap_or((0.0, 0.0));
                    let (fwd, left) = st.odom.to_local(x, y);
                    let bbox = box_from_position(fwd, left, &self.camera, &self.config);
                    self.start_plan(st, obs, &bbox)?;
                }
                self.follow_plan(st)
            }
        }
    }

    /// Translation from the active plan; yaw keeps the camera on the
    /// estimated target position rather than along the path.
    fn follow_plan(&mut self, st: &mut AgentState) -> Result<Action> {
        let plan = st.active_plan.as_mut().ok_or_else(|| Error::InvalidArgument("no active plan".into()))?;
        let mut a = plan.pursuit.command();
        if let Some((x, y)) = st.target_estimate {
            a.omega_y = -st.odom.bearing_to(x, y);
        }
        let a = self.limits.clamp(a);
        plan.pursuit.advance(&a);
        plan.ticks += 1;
        st.odom = integrate(&st.odom, &a);
        Ok(a)
    }

    /// One control tick. Errors leave the state unchanged.
    pub fn policy_step(&mut self, obs: &Observation) -> Result<Action> {
        let mut st = self
            .state
            .clone()
            .ok_or_else(|| Error::InvalidArgument("agent used before reset".into()))?;
        let before = st.mode;
        let action = self.step(&mut st, obs)?;
        self.last_action = action;
        if st.mode != before {
            self.transitions.push((before, st.mode));
        }
        self.state = Some(st);
        Ok(action)
    }
}

impl Policy for Agent {
    fn reset(&mut self, setup: &EpisodeSetup) -> Result<()> {
        let mut views = vec![setup.reference.clone()];
        views.extend(setup.augmented.iter().cloned());
        self.state = Some(initialize(&views)?);
        self.camera = setup.camera;
        self.limits = setup.limits;
        self.seed = setup.seed;
        self.plans_drawn = 0;
        self.last_action = Action::ZERO;
        self.pid.reset();
        self.transitions.clear();
        Ok(())
    }

    fn act(&mut self, obs: &Observation) -> Result<Action> {
        self.policy_step(obs)
    }

    fn mode(&self) -> &'static str {
        self.state.as_ref().map_or("", |s| s.mode.name())
    }
}

#[cfg(test)]
mod tests;
