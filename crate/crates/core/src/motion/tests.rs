use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geom::{Aabb, Vec3, MOTION_MARGIN};

fn open_scene() -> Scene {
    Scene::new(Aabb { min: Vec3::new(-1.5, -1.5, 0.0), max: Vec3::new(1.5, 1.5, 1.5) })
}

/// A box given in the robot's base frame: radial offset, sideways offset,
/// height of the centre.
fn wall(m: &RobotModel, id: &str, radial: f64, side: f64, z: f64, half: Vec3) -> BoxObject {
    let p = m.base_pose.transform_point(&Vec3::new(radial, side, z));
    BoxObject::new(id, half, Pose::new(p.x, p.y, p.z, m.base_pose.yaw), [80, 80, 80]).fixed()
}

/// Two slabs straight ahead of the base leave a horizontal slot around
/// shoulder height; swinging the arm from one side to the other must thread it.
fn narrow_gap(m: &RobotModel) -> Scene {
    let mut s = open_scene();
    s.insert(wall(m, "low", 0.69, 0.0, 0.12, Vec3::new(0.6, 0.01, 0.12)));
    s.insert(wall(m, "high", 0.69, 0.0, 0.96, Vec3::new(0.6, 0.01, 0.54)));
    s
}

fn gap_request<'a>(m: &'a RobotModel, s: &'a Scene) -> MotionRequest<'a> {
    MotionRequest {
        robot: m,
        scene: s,
        start: Config([1.2, 0.6, -1.2, 0.3, 0.0]),
        goal: Config([-1.2, 0.6, -1.2, 0.3, 0.0]),
        attached: None,
        margin: MOTION_MARGIN,
    }
}

fn assert_well_formed(t: &Trajectory, start: &Config, goal: &Config) {
    assert!(t.waypoints.len() >= 2);
    assert_eq!(t.start(), start);
    assert_eq!(t.end(), goal);
    for w in t.waypoints.windows(2) {
        assert!(w[0].max_delta(&w[1]) <= RESOLUTION + 1e-12);
    }
}

#[test]
fn empty_scene_paths_are_near_straight() {
    let m = RobotModel::default();
    let s = open_scene();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut done = 0;
    while done < 30 {
        let goal = m.random_config(&mut rng);
        let req = MotionRequest { robot: &m, scene: &s, start: Config::zeros(), goal, attached: None, margin: MOTION_MARGIN };
        if !req.checker().is_free(&goal) {
            continue;
        }
        let t = plan_rrt_connect(&req, &mut rng, DEFAULT_MAX_ITERS).expect("empty scene is solvable");
        let t = shortcut(&t, &req.checker(), &mut rng, DEFAULT_SHORTCUTS);
        assert_well_formed(&t, &req.start, &goal);
        assert!(t.length() <= 2.0 * req.start.distance(&goal) + 1e-9);
        done += 1;
    }
}

#[test]
fn colliding_endpoints_are_reported() {
    let m = RobotModel::default();
    let mut s = open_scene();
    let goal = Config([0.8, 0.3, -0.9, -0.8, 0.0]);
    let tip = m.forward_kinematics(&goal).position;
    s.insert(BoxObject::new("crate", Vec3::new(0.05, 0.05, 0.05), Pose::new(tip.x, tip.y, tip.z, 0.0), [1, 2, 3]).fixed());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let req = MotionRequest { robot: &m, scene: &s, start: Config::zeros(), goal, attached: None, margin: MOTION_MARGIN };
    match plan_rrt_connect(&req, &mut rng, 100) {
        Err(MotionError::GoalInCollision((_, b))) => assert_eq!(b, "crate"),
        other => panic!("expected goal collision, got {other:?}"),
    }
    let req = MotionRequest { start: goal, goal: Config::zeros(), ..req };
    assert!(matches!(plan_rrt_connect(&req, &mut rng, 100), Err(MotionError::StartInCollision(_))));

    let mut bad = Config::zeros();
    bad.0[1] = 3.0;
    let req = MotionRequest { start: Config::zeros(), goal: bad, ..req };
    assert_eq!(
        plan_rrt_connect(&req, &mut rng, 100),
        Err(MotionError::GoalInCollision((LIMITS.into(), SELF.into())))
    );
}

#[test]
fn floor_and_self_collisions() {
    let m = RobotModel::default();
    let s = open_scene();
    let c = CollisionChecker::new(&m, &s, None, MOTION_MARGIN);
    assert!(c.is_free(&Config::zeros()));
    // Upper arm pitched down hard with the forearm folded further down.
    let down = Config([0.0, -0.6, -1.5, 0.0, 0.0]);
    assert_eq!(c.check(&down).map(|p| p.1), Some(FLOOR.to_string()));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let folded = std::iter::repeat_with(|| m.random_config(&mut rng)).find(|q| m.self_collision(q)).unwrap();
    assert_eq!(c.check(&folded), Some((SELF.to_string(), SELF.to_string())));
}

#[test]
fn straight_line_through_an_obstacle_is_caught_mid_path() {
    let m = RobotModel::default();
    let s = narrow_gap(&m);
    let req = gap_request(&m, &s);
    let c = req.checker();
    let t = Trajectory { waypoints: densify(&[req.start, req.goal], RESOLUTION), attached: None };
    let report = validate_trajectory(&t, &c).unwrap_err();
    assert!(report.parameter > 0.0 && report.parameter < 1.0);
    assert!(report.pair.1 == "low" || report.pair.1 == "high");
    assert!(c.check(&t.sample(report.parameter)).is_some());
}

#[test]
fn narrow_gap_success_rate() {
    let m = RobotModel::default();
    let s = narrow_gap(&m);
    let req = gap_request(&m, &s);
    let mut solved = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if let Ok(t) = plan_rrt_connect(&req, &mut rng, DEFAULT_MAX_ITERS) {
            assert_well_formed(&t, &req.start, &req.goal);
            assert_eq!(validate_trajectory(&t, &req.checker()), Ok(()));
            solved += 1;
        }
    }
    assert!(solved >= 95, "narrow gap solved {solved}/100");
}

#[test]
fn retries_make_the_gap_almost_certain() {
    let m = RobotModel::default();
    let s = narrow_gap(&m);
    let req = gap_request(&m, &s);
    let mut solved = 0;
    for trial in 0..100u64 {
        let ok = (0..5).any(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(1_000 + trial * 5 + r);
            plan_rrt_connect(&req, &mut rng, DEFAULT_MAX_ITERS).is_ok()
        });
        solved += ok as usize;
    }
    assert!(solved >= 99, "five retries solved {solved}/100");
}

#[test]
fn planning_is_deterministic_per_seed() {
    let m = RobotModel::default();
    let s = narrow_gap(&m);
    let req = gap_request(&m, &s);
    let a = plan_rrt_connect(&req, &mut ChaCha8Rng::seed_from_u64(9), DEFAULT_MAX_ITERS);
    let b = plan_rrt_connect(&req, &mut ChaCha8Rng::seed_from_u64(9), DEFAULT_MAX_ITERS);
    assert_eq!(a, b);
}

fn cluttered(m: &RobotModel, rng: &mut ChaCha8Rng) -> Scene {
    let mut s = open_scene();
    for i in 0..6 {
        let radial = rng.random_range(0.25..0.8);
        let side = rng.random_range(-0.6..0.6);
        let half = Vec3::new(rng.random_range(0.03..0.08), rng.random_range(0.03..0.08), rng.random_range(0.05..0.2));
        s.insert(wall(m, &format!("box{i}"), radial, side, half.z, half));
    }
    s
}

/// Re-checks a trajectory ten times more finely than the validator does.
fn fine_check(t: &Trajectory, c: &CollisionChecker) -> bool {
    t.waypoints.windows(2).all(|w| {
        let n = ((w[0].max_delta(&w[1]) / (RESOLUTION / 10.0)).ceil() as usize).max(1);
        (0..=n).all(|i| c.is_free(&w[0].lerp(&w[1], i as f64 / n as f64)))
    })
}

#[test]
fn validator_agrees_with_a_finer_check() {
    let m = RobotModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut collisions = 0;
    for _ in 0..100 {
        let s = cluttered(&m, &mut rng);
        let c = CollisionChecker::new(&m, &s, None, MOTION_MARGIN);
        let pts: Vec<Config> = (0..3).map(|_| m.random_config(&mut rng)).collect();
        let t = Trajectory { waypoints: densify(&pts, RESOLUTION), attached: None };
        let coarse = validate_trajectory(&t, &c);
        assert_eq!(coarse.is_ok(), fine_check(&t, &c));
        collisions += coarse.is_err() as usize;
    }
    assert!(collisions > 10 && collisions < 100);
}

#[test]
fn shortcut_keeps_straight_paths() {
    let m = RobotModel::default();
    let s = open_scene();
    let c = CollisionChecker::new(&m, &s, None, MOTION_MARGIN);
    let goal = Config([0.5, 0.3, -0.4, -0.2, 1.0]);
    let t = Trajectory { waypoints: densify(&[Config::zeros(), goal], RESOLUTION), attached: None };
    let out = shortcut(&t, &c, &mut ChaCha8Rng::seed_from_u64(1), 50);
    assert!((out.length() - t.length()).abs() < 1e-9);
    assert_well_formed(&out, &Config::zeros(), &goal);
}

#[test]
fn shortcut_straightens_zig_zags() {
    let m = RobotModel::default();
    let s = open_scene();
    let c = CollisionChecker::new(&m, &s, None, MOTION_MARGIN);
    let pts = [Config::zeros(), Config([0.4, 0.4, 0.0, 0.0, 0.0]), Config([0.8, 0.0, 0.0, 0.0, 0.0]), Config([1.2, 0.4, 0.0, 0.0, 0.0])];
    let t = Trajectory { waypoints: densify(&pts, RESOLUTION), attached: None };
    let out = shortcut(&t, &c, &mut ChaCha8Rng::seed_from_u64(1), 50);
    assert!(out.length() < t.length() - 1e-6);
    assert_well_formed(&out, &pts[0], &pts[3]);
}

#[test]
fn shortcut_preserves_validity_in_clutter() {
    let m = RobotModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cases = 0;
    while cases < 100 {
        let s = cluttered(&m, &mut rng);
        let req = MotionRequest {
            robot: &m,
            scene: &s,
            start: m.random_config(&mut rng),
            goal: m.random_config(&mut rng),
            attached: None,
            margin: MOTION_MARGIN,
        };
        let Ok(t) = plan_rrt_connect(&req, &mut rng, 1_000) else { continue };
        let c = req.checker();
        let out = shortcut(&t, &c, &mut rng, DEFAULT_SHORTCUTS);
        assert_eq!(validate_trajectory(&out, &c), Ok(()));
        assert!(out.length() <= t.length() + 1e-9);
        assert_well_formed(&out, &req.start, &req.goal);
        cases += 1;
    }
}

#[test]
fn carried_object_collides_but_may_rest() {
    let m = RobotModel::default();
    let mut s = open_scene();
    let q = Config([0.0, 0.4, -0.9, -1.07, 0.0]);
    let ee = m.forward_kinematics(&q);
    let held = BoxObject::new("cube", Vec3::new(0.02, 0.02, 0.02), ee.compose(&Pose::new(0.0, 0.0, -0.028, 0.0)), [9, 9, 9]);
    let grasp = ee.inverse().compose(&held.pose);
    // A table top touching the cube from below and a post beside it.
    let top = held.bottom_z();
    s.insert(BoxObject::new("table", Vec3::new(0.3, 0.3, top / 2.0), Pose::new(ee.position.x, ee.position.y + 0.25, top / 2.0, 0.0), [0, 0, 0]).fixed());
    s.insert(held.clone());
    let att = Attachment { object: "cube".into(), grasp };
    let c = CollisionChecker::new(&m, &s, Some(&att), MOTION_MARGIN);
    assert_eq!(c.check(&q), None);
    let p = held.pose.position;
    s.insert(BoxObject::new("post", Vec3::new(0.01, 0.01, 0.015), Pose::new(p.x + 0.028, p.y, p.z, 0.0), [0, 0, 0]).fixed());
    let c = CollisionChecker::new(&m, &s, Some(&att), MOTION_MARGIN);
    assert_eq!(c.check(&q), Some(("cube".to_string(), "post".to_string())));
    // Object-object overlaps are not the arm's concern.
    let c = CollisionChecker::new(&m, &s, None, MOTION_MARGIN);
    assert_eq!(c.check(&q), None);
}

#[test]
fn trajectory_sampling_endpoints() {
    let a = Config::zeros();
    let b = Config([0.1, 0.2, 0.0, 0.0, 0.0]);
    let t = Trajectory { waypoints: densify(&[a, b], RESOLUTION), attached: None };
    assert_eq!(t.sample(0.0), a);
    assert!(t.sample(1.0).distance(&b) < 1e-12);
    assert!(t.sample(0.5).distance(&a.lerp(&b, 0.5)) < 1e-9);
}
