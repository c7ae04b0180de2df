use super::*;
use crate::features::{cosine_similarity, describe, generate_manifold_set, ManifoldSet, ManifoldSpec};
use crate::planner::{NetConfig, NoisePredictor};
use crate::sim::{reward, run_in_world, Behavior, Candidate, DescriptorContext, Entity, EpisodeConfig, Rect, SensorConfig, Tracker, World};

fn manifolds() -> ManifoldSet {
    generate_manifold_set(&ManifoldSpec::default(), 11).unwrap()
}

fn random_planner() -> Arc<PlannerHandle> {
    let model = NoisePredictor::new(NetConfig::default(), &mut rng::seeded(4));
    Arc::new(PlannerHandle::new(Checkpoint { model, k: 10, horizon: 16 }).unwrap())
}

fn setup(set: &ManifoldSet) -> EpisodeSetup {
    let m = &set.manifolds[0];
    EpisodeSetup {
        reference: describe(m, 0.0, 0.0, 0),
        augmented: (0..8).map(|i| describe(m, i as f64 * 0.785, 0.0, 0)).collect(),
        camera: CameraConfig::default(),
        limits: ActionLimits::default(),
        seed: 5,
    }
}

fn agent(variant: Variant, set: &ManifoldSet) -> Agent {
    let planner = variant.uses_planner().then(random_planner);
    let mut a = Agent::new(AgentConfig::default(), variant, planner).unwrap();
    a.reset(&setup(set)).unwrap();
    a
}

fn candidate(set: &ManifoldSet, id: u32, bbox: [f64; 4], confidence: f64) -> Candidate {
    Candidate {
        bbox,
        instance_id: id,
        category: "person".into(),
        visibility: confidence,
        feature: describe(&set.manifolds[id as usize], 0.3, 0.0, 1),
        confidence,
    }
}

fn frame(step: u64, candidates: Vec<Candidate>) -> Observation {
    Observation {
        step,
        candidates,
        occupancy: vec![0.0; CROP_CELLS * CROP_CELLS],
        camera: CameraConfig::default(),
    }
}

fn centered() -> [f64; 4] {
    let h = height_setpoint(&CameraConfig::default(), &AgentConfig::default());
    [80.0, 60.0, 20.0, h]
}

#[test]
fn initialize_variants() {
    let set = manifolds();
    let v = describe(&set.manifolds[0], 0.2, 0.0, 0);
    let st = initialize(std::slice::from_ref(&v)).unwrap();
    assert_eq!(st.mode, Mode::Detect);
    assert!(st.kf.is_none());
    assert!(cosine_similarity(&st.prototype.vector, &v).unwrap() > 1.0 - 1e-12);

    let s = setup(&set);
    let mut views = vec![s.reference.clone()];
    views.extend(s.augmented);
    let st = initialize(&views).unwrap();
    let cos = cosine_similarity(&st.prototype.vector, &set.manifolds[0].mean_direction).unwrap();
    assert!(cos >= 0.8, "{cos}");

    assert!(initialize(&[]).is_err());
}

#[test]
fn planner_variants_need_a_checkpoint() {
    assert!(Agent::new(AgentConfig::default(), Variant::Full, None).is_err());
    assert!(Agent::new(AgentConfig::default(), Variant::NoPlannerPid, None).is_ok());
    let bad = AgentConfig {
        trigger_len: 0,
        ..AgentConfig::default()
    };
    assert!(Agent::new(bad, Variant::NoPlannerPid, None).is_err());
}

#[test]
fn centred_target_at_setpoint_needs_no_action() {
    let set = manifolds();
    let mut a = agent(Variant::Full, &set);
    for t in 0..5 {
        let act = a.policy_step(&frame(t, vec![candidate(&set, 0, centered(), 1.0)])).unwrap();
        assert_eq!(a.state().unwrap().mode, Mode::Track);
        assert!(act.omega_y.abs() < 1e-9 && act.v_f.abs() < 1e-9, "{act:?}");
    }
}

#[test]
fn low_confidence_run_triggers_one_plan() {
    let set = manifolds();
    let mut a = agent(Variant::Full, &set);
    a.policy_step(&frame(0, vec![candidate(&set, 0, centered(), 1.0)])).unwrap();
    for t in 1..=10 {
        a.policy_step(&frame(t, vec![candidate(&set, 0, centered(), 0.2)])).unwrap();
        assert_eq!(a.state().unwrap().mode, Mode::Track, "step {t}");
        assert_eq!(a.state().unwrap().lost_count, t as usize);
    }
    a.policy_step(&frame(11, vec![candidate(&set, 0, centered(), 0.2)])).unwrap();
    assert_eq!(a.state().unwrap().mode, Mode::Plan);
    assert_eq!(a.transitions(), &[(Mode::Detect, Mode::Track), (Mode::Track, Mode::Plan)]);
}

#[test]
fn distractors_alone_never_initialise() {
    let set = manifolds();
    let mut a = agent(Variant::Full, &set);
    for t in 0..30 {
        let cands = (1..5).map(|id| candidate(&set, id, [40.0 + 20.0 * id as f64, 60.0, 10.0, 40.0], 1.0)).collect();
        let act = a.policy_step(&frame(t, cands)).unwrap();
        assert_eq!(a.state().unwrap().mode, Mode::Detect);
        assert_eq!(act.omega_y, AgentConfig::default().search_rate);
    }
    assert!(a.transitions().is_empty());
}

#[test]
fn prototype_moves_only_on_confident_measurements() {
    let set = manifolds();
    let mut a = agent(Variant::Full, &set);
    a.policy_step(&frame(0, vec![candidate(&set, 0, centered(), 1.0)])).unwrap();
    let p0 = a.state().unwrap().prototype.clone();
    a.policy_step(&frame(1, vec![candidate(&set, 0, centered(), 0.3)])).unwrap();
    assert_eq!(a.state().unwrap().prototype, p0);
    a.policy_step(&frame(2, vec![candidate(&set, 0, centered(), 0.9)])).unwrap();
    assert_eq!(a.state().unwrap().prototype.update_count, p0.update_count + 1);

    let mut frozen = agent(Variant::NoEma, &set);
    frozen.policy_step(&frame(0, vec![candidate(&set, 0, centered(), 1.0)])).unwrap();
    let before = frozen.state().unwrap().prototype.vector.clone();
    frozen.policy_step(&frame(1, vec![candidate(&set, 0, centered(), 1.0)])).unwrap();
    assert_eq!(frozen.state().unwrap().prototype.vector, before);
}

#[test]
fn plan_recovers_to_track_or_falls_back_to_detect() {
    let set = manifolds();
    let mut a = agent(Variant::Full, &set);
    a.policy_step(&frame(0, vec![candidate(&set, 0, centered(), 1.0)])).unwrap();
    for t in 1..=11 {
        a.policy_step(&frame(t, vec![])).unwrap();
    }
    assert_eq!(a.state().unwrap().mode, Mode::Plan);
    // One plan plus the replan budget, each run for plan_exec_len ticks at most.
    let cfg = AgentConfig::default();
    let mut t = 12;
    while a.state().unwrap().mode == Mode::Plan {
        a.policy_step(&frame(t, vec![])).unwrap();
        t += 1;
        assert!(t < 12 + (cfg.replan_budget as u64 + 1) * cfg.plan_exec_len as u64 + 2);
    }
    assert_eq!(a.state().unwrap().mode, Mode::Detect);
    assert!(a.state().unwrap().kf.is_none());
    a.policy_step(&frame(t, vec![candidate(&set, 0, centered(), 1.0)])).unwrap();
    assert_eq!(a.state().unwrap().mode, Mode::Track);

    let mut b = agent(Variant::Full, &set);
    b.policy_step(&frame(0, vec![candidate(&set, 0, centered(), 1.0)])).unwrap();
    for t in 1..=11 {
        b.policy_step(&frame(t, vec![])).unwrap();
    }
    b.policy_step(&frame(12, vec![candidate(&set, 0, centered(), 0.1)])).unwrap();
    assert_eq!(b.state().unwrap().mode, Mode::Track, "re-match ignores confidence");
    assert_eq!(b.state().unwrap().lost_count, 0);
}

#[test]
fn pid_variant_never_plans() {
    let set = manifolds();
    let mut a = agent(Variant::NoPlannerPid, &set);
    a.policy_step(&frame(0, vec![candidate(&set, 0, centered(), 1.0)])).unwrap();
    for t in 1..100 {
        a.policy_step(&frame(t, vec![])).unwrap();
    }
    assert_eq!(a.state().unwrap().mode, Mode::Track);
    assert_eq!(a.state().unwrap().lost_count, 99);
}

#[test]
fn box_position_roundtrip() {
    let cam = CameraConfig::default();
    let cfg = AgentConfig::default();
    for &(f, l) in &[(2.5, 0.0), (3.0, 1.0), (4.0, -1.5)] {
        let b = box_from_position(f, l, &cam, &cfg);
        let (f2, l2) = position_from_box(&b, &cam, cfg.target_height);
        assert!((f - f2).abs() < 1e-9 && (l - l2).abs() < 1e-9, "{f2} {l2}");
    }
}

fn open_world(tracker: Pose, target: Pose) -> (World, DescriptorContext) {
    let set = generate_manifold_set(
        &ManifoldSpec {
            num_instances: 1,
            ..ManifoldSpec::default()
        },
        3,
    )
    .unwrap();
    let sensor = SensorConfig {
        bbox_noise_px: 0.0,
        confidence_sigma: 0.0,
        feature_noise: 0.0,
        ..SensorConfig::default()
    };
    let ctx = DescriptorContext::new(set, sensor, &mut rng::seeded(1));
    let world = World::new(
        Rect::new(-20.0, -20.0, 20.0, 20.0),
        vec![],
        Tracker { pose: tracker, radius: 0.25 },
        vec![Entity::new(target, 0, Behavior::Static, 0.0)],
        rng::seeded(2),
    );
    (world, ctx)
}

#[test]
fn closes_in_and_holds_from_any_nearby_spawn() {
    let cfg = EpisodeConfig {
        max_steps: 200,
        ..EpisodeConfig::default()
    };
    let theta_max = CameraConfig::default().fov_h / 2.0;
    for (i, &d) in [1.5, 2.5, 4.0, 6.0].iter().enumerate() {
        for &off in &[-0.6, 0.0, 0.6] {
            let target = Pose::new(d, 0.0, 1.0);
            let tracker = Pose::new(0.0, 0.0, off);
            let (world, ctx) = open_world(tracker, target);
            let mut a = Agent::new(AgentConfig::default(), Variant::NoPlannerPid, None).unwrap();
            let log = run_in_world(&mut a, world, &ctx, &cfg, i as u64);
            assert_eq!(log.len(), 200);
            let settled = log.steps.iter().rposition(|s| {
                let r = reward(
                    &Pose::new(s.tracker_pose[0], s.tracker_pose[1], s.tracker_pose[2]),
                    &target,
                    cfg.d_star,
                    cfg.d_max,
                    theta_max,
                );
                r <= 0.9
            });
            let settled = settled.map_or(0, |i| i + 1);
            assert!(settled <= 100, "d={d} off={off}: settled at {settled}");
        }
    }
}

#[test]
fn same_seed_same_actions() {
    let (world, ctx) = open_world(Pose::new(0.0, 0.0, 0.3), Pose::new(4.0, 1.0, 0.0));
    let cfg = EpisodeConfig {
        max_steps: 60,
        ..EpisodeConfig::default()
    };
    let run = || {
        let mut a = Agent::new(AgentConfig::default(), Variant::Full, Some(random_planner())).unwrap();
        run_in_world(&mut a, world.clone(), &ctx, &cfg, 9)
    };
    assert_eq!(run().steps, run().steps);
}

#[test]
fn ego_shift_follows_the_camera() {
    let cam = CameraConfig::default();
    let cfg = AgentConfig::default();
    let b = box_from_position(3.0, 0.0, &cam, &cfg);
    let same = ego_shift(&b, &Action::ZERO, &cam, &cfg);
    for (x, y) in same.iter().zip(&b) {
        assert!((x - y).abs() < 1e-9);
    }
    // Turning right moves a centred target toward the left edge.
    let turned = ego_shift(&b, &Action::new(0.0, 0.0, 0.1), &cam, &cfg);
    let expected = cam.image_w / 2.0 - cam.focal() * 0.1f64.tan();
    assert!((turned[0] - expected).abs() < 1e-6, "{turned:?}");
    // Driving closer makes it taller.
    let closer = ego_shift(&b, &Action::new(0.5, 0.0, 0.0), &cam, &cfg);
    assert!((closer[3] - b[3] * 3.0 / 2.5).abs() < 1e-6);
    assert!((closer[0] - b[0]).abs() < 1e-9);
}

#[test]
fn without_a_filter_nothing_is_pursued_blind() {
    let set = manifolds();
    let mut a = agent(Variant::NoKf, &set);
    let off = [120.0, 60.0, 20.0, 40.0];
    a.policy_step(&frame(0, vec![candidate(&set, 0, off, 1.0)])).unwrap();
    assert!(a.state().unwrap().kf.is_none());
    let act = a.policy_step(&frame(1, vec![])).unwrap();
    assert_eq!(act, Action::ZERO);
    assert_eq!(a.state().unwrap().last_box, Some(off));
    // A low-confidence box is still followed raw.
    let act = a.policy_step(&frame(2, vec![candidate(&set, 0, off, 0.2)])).unwrap();
    assert!(act.omega_y > 0.0);
    assert_eq!(a.state().unwrap().lost_count, 2);

    // The full agent keeps steering on its prediction instead.
    let mut f = agent(Variant::Full, &set);
    f.policy_step(&frame(0, vec![candidate(&set, 0, off, 1.0)])).unwrap();
    assert!(f.policy_step(&frame(1, vec![])).unwrap().omega_y > 0.0);
}
