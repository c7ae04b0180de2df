//! Closed-loop episodes and their logs.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::camera::CameraConfig;
use super::render::{render, view_angle, DescriptorContext, Observation};
use super::scenario::ScenarioConfig;
use super::world::{reward, step_world, Action, ActionLimits, World};
use crate::features::FeatureVector;
use crate::rng;
use crate::Result;

/// What a policy is told before the first frame: the reference view of the
/// target and its augmentations.
#[derive(Debug, Clone)]
pub struct EpisodeSetup {
    pub reference: FeatureVector,
    pub augmented: Vec<FeatureVector>,
    pub camera: CameraConfig,
    pub limits: ActionLimits,
    pub seed: u64,
}

pub trait Policy {
    fn reset(&mut self, setup: &EpisodeSetup) -> Result<()>;
    fn act(&mut self, obs: &Observation) -> Result<Action>;
    /// Short label of the policy's internal mode, for diagnostics.
    fn mode(&self) -> &'static str {
        ""
    }
}

/// Holds still; handy for mechanics tests.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdlePolicy;

impl Policy for IdlePolicy {
    fn reset(&mut self, _: &EpisodeSetup) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, _: &Observation) -> Result<Action> {
        Ok(Action::ZERO)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    /// Episodes end once the target has been out of view for more than this
    /// many consecutive steps.
    pub lost_limit: usize,
    pub d_star: f64,
    pub d_max: f64,
    /// Defaults to half the horizontal field of view when `None`.
    pub theta_max: Option<f64>,
    pub n_views: usize,
    pub dt: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: 500,
            lost_limit: 50,
            d_star: 2.5,
            d_max: 5.0,
            theta_max: None,
            n_views: 8,
            dt: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub tracker_pose: [f64; 3],
    pub target_pose: [f64; 3],
    pub action: [f64; 4],
    pub reward: f64,
    pub target_visible: bool,
    pub bbox: Option<[f64; 4]>,
    pub confidence: f64,
    #[serde(skip)]
    pub mode: &'static str,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeLog {
    pub steps: Vec<StepRecord>,
    pub max_steps: usize,
    pub image_w: usize,
    pub terminated_early: bool,
    /// Set when the policy failed; the episode then counts as a failure.
    pub error: Option<String>,
}

impl EpisodeLog {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn reached(&self, horizon: usize) -> bool {
        self.error.is_none() && self.len() >= horizon
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for s in &self.steps {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(text: &str) -> Result<Vec<StepRecord>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(Into::into))
            .collect()
    }
}

fn pose3(p: &super::geometry::Pose) -> [f64; 3] {
    [p.x, p.y, p.yaw]
}

/// Reference feature of the target as seen from the tracker's spawn, plus an
/// evenly spaced sweep of synthetic views starting there.
pub fn make_setup(world: &World, ctx: &DescriptorContext, cfg: &EpisodeConfig, seed: u64) -> EpisodeSetup {
    let mut r = rng::child(seed, &[0x5e7]);
    let target = world.target();
    let angle = view_angle(&world.tracker.pose, &target.pose);
    let reference = ctx.feature(target.instance_id, angle, 0, &mut r);
    let n = cfg.n_views.max(1);
    let augmented = (0..n)
        .map(|i| {
            let a = angle + std::f64::consts::TAU * i as f64 / n as f64;
            ctx.feature(target.instance_id, a, 0, &mut r)
        })
        .collect();
    EpisodeSetup {
        reference,
        augmented,
        camera: ctx.sensor.camera,
        limits: world.limits,
        seed,
    }
}

/// Runs one episode in a prepared world.
pub fn run_in_world(
    policy: &mut dyn Policy,
    mut world: World,
    ctx: &DescriptorContext,
    cfg: &EpisodeConfig,
    seed: u64,
) -> EpisodeLog {
    let theta_max = cfg.theta_max.unwrap_or(ctx.sensor.camera.fov_h / 2.0);
    let mut log = EpisodeLog {
        steps: Vec::with_capacity(cfg.max_steps),
        max_steps: cfg.max_steps,
        image_w: ctx.sensor.camera.image_w as usize,
        ..EpisodeLog::default()
    };
    let setup = make_setup(&world, ctx, cfg, seed);
    if let Err(e) = policy.reset(&setup) {
        log.error = Some(e.to_string());
        log.terminated_early = true;
        return log;
    }
    let mut sensor_rng = rng::child(seed, &[0x0b5]);
    let mut lost = 0usize;
    for _ in 0..cfg.max_steps {
        let obs = render(&world, ctx, &mut sensor_rng);
        let target = world.target();
        let seen = obs.candidate_of(target.instance_id);
        let visible = seen.is_some();
        lost = if visible { 0 } else { lost + 1 };
        let r = reward(&world.tracker.pose, &target.pose, cfg.d_star, cfg.d_max, theta_max);
        let (action, error) = match policy.act(&obs) {
            Ok(a) => (world.limits.clamp(a), None),
            Err(e) => (Action::ZERO, Some(e.to_string())),
        };
        log.steps.push(StepRecord {
            step: world.time_step,
            tracker_pose: pose3(&world.tracker.pose),
            target_pose: pose3(&target.pose),
            action: action.as_array(),
            reward: r,
            target_visible: visible,
            bbox: seen.map(|c| c.bbox),
            confidence: seen.map_or(0.0, |c| c.confidence),
            mode: policy.mode(),
        });
        if error.is_some() {
            log.error = error;
            log.terminated_early = true;
            break;
        }
        if lost > cfg.lost_limit {
            log.terminated_early = true;
            break;
        }
        step_world(&mut world, &action, cfg.dt);
    }
    log
}

/// Builds the scenario world for `seed` and runs one episode in it.
pub fn run_episode(policy: &mut dyn Policy, scenario: &ScenarioConfig, cfg: &EpisodeConfig, seed: u64) -> Result<EpisodeLog> {
    let (world, ctx) = scenario.build(seed)?;
    Ok(run_in_world(policy, world, &ctx, cfg, seed))
}

/// Runs one episode per seed in parallel; results come back in seed order.
pub fn run_batch<P, F>(make_policy: F, scenario: &ScenarioConfig, cfg: &EpisodeConfig, seeds: &[u64]) -> Result<Vec<EpisodeLog>>
where
    P: Policy,
    F: Fn() -> P + Sync,
{
    seeds
        .par_iter()
        .map(|&s| {
            let mut p = make_policy();
            run_episode(&mut p, scenario, cfg, s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{generate_manifold_set, ManifoldSpec};
    use crate::sim::geometry::{Obstacle, Pose, Rect};
    use crate::sim::render::SensorConfig;
    use crate::sim::world::{Behavior, Entity, Tracker};

    fn ctx() -> DescriptorContext {
        let set = generate_manifold_set(
            &ManifoldSpec {
                num_instances: 2,
                ..ManifoldSpec::default()
            },
            1,
        )
        .unwrap();
        DescriptorContext::new(set, SensorConfig::default(), &mut rng::seeded(0))
    }

    /// Target in plain view at (4, 5), hidden behind a wall at (4, 8) for
    /// steps `from..from + hidden`.
    fn hide_world(from: usize, hidden: usize) -> World {
        let seen = Pose::new(4.5, 5.0, 0.0);
        let behind = Pose::new(8.0, 8.5, 0.0);
        let script = (0..600)
            .map(|t| if t >= from && t < from + hidden { behind } else { seen })
            .collect();
        World::new(
            Rect::new(0.0, 0.0, 10.0, 10.0),
            vec![Obstacle::new(Rect::new(6.0, 7.0, 6.5, 10.0), 3.0)],
            Tracker {
                pose: Pose::new(2.0, 5.0, 0.0),
                radius: 0.25,
            },
            vec![Entity::new(seen, 0, Behavior::Scripted(script), 0.0)],
            rng::seeded(2),
        )
    }

    #[test]
    fn hidden_for_lost_limit_plus_one_terminates() {
        let cfg = EpisodeConfig::default();
        let log = run_in_world(&mut IdlePolicy, hide_world(10, 51), &ctx(), &cfg, 0);
        assert!(log.terminated_early);
        assert_eq!(log.len(), 10 + 51);
        let log = run_in_world(&mut IdlePolicy, hide_world(10, 50), &ctx(), &cfg, 0);
        assert!(!log.terminated_early);
        assert_eq!(log.len(), 500);
    }

    #[test]
    fn perfect_follow_scores_one_per_step() {
        let w = World::new(
            Rect::new(0.0, 0.0, 10.0, 10.0),
            vec![],
            Tracker {
                pose: Pose::new(2.0, 5.0, 0.0),
                radius: 0.25,
            },
            vec![Entity::new(Pose::new(4.5, 5.0, 0.0), 0, Behavior::Static, 0.0)],
            rng::seeded(2),
        );
        let log = run_in_world(&mut IdlePolicy, w, &ctx(), &EpisodeConfig::default(), 0);
        assert_eq!(log.len(), 500);
        assert_eq!(log.total_reward(), 500.0);
        assert!(log.reached(500));
    }

    #[test]
    fn single_step_episode() {
        let cfg = EpisodeConfig {
            max_steps: 1,
            ..EpisodeConfig::default()
        };
        let scenario = ScenarioConfig::preset("distractors2").unwrap();
        let log = run_episode(&mut IdlePolicy, &scenario, &cfg, 4).unwrap();
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn jsonl_roundtrip_and_determinism() {
        let cfg = EpisodeConfig {
            max_steps: 40,
            ..EpisodeConfig::default()
        };
        let scenario = ScenarioConfig::preset("occlusion_heavy").unwrap();
        let a = run_episode(&mut IdlePolicy, &scenario, &cfg, 9).unwrap();
        let b = run_episode(&mut IdlePolicy, &scenario, &cfg, 9).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        a.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        let keys: Vec<_> = first.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 8);
        assert_eq!(EpisodeLog::read_jsonl(&text).unwrap(), a.steps);
    }

    struct Failing;
    impl Policy for Failing {
        fn reset(&mut self, _: &EpisodeSetup) -> Result<()> {
            Ok(())
        }
        fn act(&mut self, _: &Observation) -> Result<Action> {
            Err(crate::Error::NonFiniteOutput)
        }
    }

    #[test]
    fn policy_errors_fail_the_episode() {
        let scenario = ScenarioConfig::preset("open").unwrap();
        let log = run_episode(&mut Failing, &scenario, &EpisodeConfig::default(), 1).unwrap();
        assert!(log.error.is_some());
        assert!(!log.reached(1));
    }
}
