//! Continuous refinement of symbolic actions and sampling of initial worlds.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use rand::Rng;

use super::PlanError;
use crate::geom::{box_box_collide, BoxObject, Pose, Scene, Vec3, MOTION_MARGIN, PLACEMENT_MARGIN};
use crate::motion::{plan_rrt_connect, shortcut, MotionError, MotionRequest, Trajectory};
use crate::pddl::{DomainDef, GroundAction, GroundAtom, ProblemDef, SymbolicState};
use crate::robot::{Config, RobotModel};
use crate::sim::{consistent, is_geometric, settle, ActionBinding, ActionKind, Category, Detail, ViolationKind, WorldState, TABLE};

/// End-effector height above the top face of a grasped object.
pub const GRASP_STANDOFF: f64 = 0.008;
/// Height above the support at which a carried object is released.
pub const DROP_GAP: f64 = 0.003;
/// Horizontal distance band around the base where placements are sampled.
pub const REACH_BAND: (f64, f64) = (0.2, 0.8);
pub const INIT_SAMPLES: usize = 200;
/// Clearance between objects in sampled initial worlds.
const INIT_GAP: f64 = 0.005;
/// RRT calls allowed in one refinement attempt.
const MOTION_ATTEMPTS: usize = 3;
pub const DEFAULT_HALF: f64 = 0.02;

/// Raised, out-of-the-way arm configuration for initial worlds.
pub fn home_config() -> Config {
    Config([0.0, 1.2, -1.5, -1.2, 0.0])
}

/// Planner parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PlannerConfig {
    pub k: usize,
    pub retries: usize,
    /// Seconds.
    pub timeout: f64,
    pub seed: u64,
    pub rrt_max_iters: usize,
    pub samples_per_action: usize,
    pub shortcuts: usize,
    pub node_budget: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            k: 30,
            retries: 5,
            timeout: 600.0,
            seed: 0,
            rrt_max_iters: crate::motion::DEFAULT_MAX_ITERS,
            samples_per_action: 10,
            shortcuts: crate::motion::DEFAULT_SHORTCUTS,
            node_budget: crate::topk::DEFAULT_NODE_BUDGET,
        }
    }
}

/// Stages at which a refinement can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Goal,
    Ik,
    Motion,
    Execution,
}

impl Stage {
    pub fn category(self) -> Category {
        match self {
            Stage::Goal => Category::GoalCollision,
            Stage::Ik => Category::IkFailure,
            Stage::Motion => Category::MotionFailure,
            Stage::Execution => Category::ExecutionInconsistency,
        }
    }
}

/// Forces failures at chosen stages, for testing the replanning logic.
pub trait FaultInjector: Sync {
    /// `attempt` counts expansions of `node`, starting at zero.
    fn fails(&self, stage: Stage, node: usize, attempt: usize, action: &str) -> bool;
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Fault {
    /// Action label, such as `pickup a`.
    pub action: String,
    pub stage: Stage,
    /// Only at this tree node, when set.
    pub node: Option<usize>,
    /// Fails the first this many attempts; `None` fails every attempt.
    pub attempts: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Faults(pub Vec<Fault>);

impl FaultInjector for Faults {
    fn fails(&self, stage: Stage, node: usize, attempt: usize, action: &str) -> bool {
        self.0.iter().any(|f| {
            f.stage == stage && f.action == action && f.node.is_none_or(|n| n == node) && f.attempts.is_none_or(|a| attempt < a)
        })
    }
}

pub(super) fn injected(stage: Stage, action: &str) -> ViolationKind {
    ViolationKind::new(stage.category(), None, format!("injected {stage:?} failure for {action}").to_lowercase())
}

/// Where a fault check is asked about.
#[derive(Clone, Copy)]
pub struct FaultSite<'a> {
    pub faults: Option<&'a dyn FaultInjector>,
    pub node: usize,
    pub attempt: usize,
}

impl FaultSite<'_> {
    pub fn none() -> FaultSite<'static> {
        FaultSite { faults: None, node: 0, attempt: 0 }
    }

    pub(super) fn check(&self, stage: Stage, action: &GroundAction) -> Result<(), ViolationKind> {
        let label = action.label();
        match self.faults {
            Some(f) if f.fails(stage, self.node, self.attempt, &label) => Err(injected(stage, &label)),
            _ => Ok(()),
        }
    }
}

/// A refinement failure and the end-effector goal it was for, if one was
/// sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub ee_goal: Option<Pose>,
    pub violation: ViolationKind,
}

fn stage_of(v: &ViolationKind) -> Stage {
    match v.category {
        Category::GoalCollision => Stage::Goal,
        Category::IkFailure => Stage::Ik,
        Category::MotionFailure => Stage::Motion,
        Category::ExecutionInconsistency => Stage::Execution,
    }
}

/// Keeps the failure from the latest stage reached.
fn furthest(best: Option<Failure>, f: Failure) -> Option<Failure> {
    match best {
        Some(b) if stage_of(&b.violation) > stage_of(&f.violation) => Some(b),
        _ => Some(f),
    }
}

/// Refinement and execution of symbolic actions against one robot.
pub struct Refiner<'a> {
    pub robot: &'a RobotModel,
    pub domain: &'a DomainDef,
    pub config: &'a PlannerConfig,
}

/// The region Blocksworld's table atoms refer to.
fn table_id(scene: &Scene) -> Option<String> {
    if scene.regions.contains(TABLE) {
        Some(TABLE.to_string())
    } else {
        scene.regions.iter().next().cloned()
    }
}

fn within_reach(robot: &RobotModel, x: f64, y: f64) -> bool {
    let b = robot.base_pose.position;
    let d = ((x - b.x).powi(2) + (y - b.y).powi(2)).sqrt();
    (REACH_BAND.0..=REACH_BAND.1).contains(&d)
}

/// A pose for `obj` resting on `support` (plus `lift`), drawn uniformly over
/// the support's top face for regions and over its inner half for objects.
fn sample_on(robot: &RobotModel, obj: &BoxObject, support: &BoxObject, region: bool, lift: f64, rng: &mut impl Rng) -> Option<Pose> {
    let h = support.half_extents;
    let scale = if region { 1.0 } else { 0.5 };
    let u = rng.random_range(-h.x * scale..=h.x * scale);
    let v = rng.random_range(-h.y * scale..=h.y * scale);
    let yaw = rng.random_range(-PI..PI);
    let c = support.pose.transform_point(&Vec3::new(u, v, 0.0));
    let pose = Pose::new(c.x, c.y, support.top_z() + obj.half_extents.z + lift, yaw);
    let mut placed = obj.clone();
    placed.pose = pose;
    if region && !placed.corners_xy(0.0).iter().all(|[x, y]| support.footprint_contains(*x, *y, 1e-9)) {
        return None;
    }
    within_reach(robot, c.x, c.y).then_some(pose)
}

impl Refiner<'_> {
    /// End-effector goal for `action`: a top grasp over the object with a
    /// random yaw, or the pose that releases the held object just above a
    /// sampled collision-free placement.
    pub fn sample_ee_goal(&self, action: &GroundAction, world: &WorldState, rng: &mut impl Rng) -> Result<Pose, ViolationKind> {
        let scene = &world.scene;
        match ActionKind::of(action) {
            ActionKind::Grasp { object } => {
                let o = scene
                    .get(&object)
                    .filter(|o| !o.fixed)
                    .ok_or_else(|| ViolationKind::new(Category::GoalCollision, None, format!("{object} is not a movable object")))?;
                let p = o.pose.position;
                Ok(Pose::new(p.x, p.y, o.top_z() + GRASP_STANDOFF, rng.random_range(-PI..PI)))
            }
            ActionKind::Place { object, onto } => {
                let attachment = world
                    .attachment
                    .as_ref()
                    .filter(|a| a.object == object)
                    .ok_or_else(|| ViolationKind::new(Category::GoalCollision, None, format!("{object} is not held")))?;
                let onto = if scene.get(&onto).is_some() { Some(onto) } else { table_id(scene) };
                let support = onto
                    .as_deref()
                    .and_then(|id| scene.get(id))
                    .ok_or_else(|| ViolationKind::new(Category::GoalCollision, None, format!("no support for {object}")))?;
                let region = scene.regions.contains(&support.id);
                let obj = &scene.objects[&object];
                let mut last_hit = None;
                for _ in 0..self.config.samples_per_action {
                    let Some(target) = sample_on(self.robot, obj, support, region, DROP_GAP, rng) else { continue };
                    let mut placed = obj.clone();
                    placed.pose = target;
                    let hit = scene
                        .objects
                        .values()
                        .find(|o| o.id != object && o.id != support.id && box_box_collide(&placed, o, PLACEMENT_MARGIN));
                    match hit {
                        Some(o) => last_hit = Some(o.id.clone()),
                        None => return Ok(target.compose(&attachment.grasp.inverse())),
                    }
                }
                let why = last_hit.map_or("no reachable spot".to_string(), |h| format!("last draw hit {h}"));
                Err(ViolationKind::new(
                    Category::GoalCollision,
                    Some(Detail::CollisionPair),
                    format!("no collision-free placement of {object} on {} in {} draws ({why})", support.id, self.config.samples_per_action),
                ))
            }
            ActionKind::Flag => Ok(self.robot.forward_kinematics(&world.robot_config)),
        }
    }

    fn motion(&self, world: &WorldState, goal: Config, rng: &mut impl Rng) -> Result<Trajectory, ViolationKind> {
        let req = MotionRequest {
            robot: self.robot,
            scene: &world.scene,
            start: world.robot_config,
            goal,
            attached: world.attachment.as_ref(),
            margin: MOTION_MARGIN,
        };
        match plan_rrt_connect(&req, rng, self.config.rrt_max_iters) {
            Ok(t) => Ok(shortcut(&t, &req.checker(), rng, self.config.shortcuts)),
            Err(MotionError::GoalInCollision((a, b))) => Err(ViolationKind::new(
                Category::GoalCollision,
                Some(Detail::CollisionPair),
                format!("goal configuration puts {a} into {b}"),
            )),
            Err(e) => Err(ViolationKind::new(Category::MotionFailure, None, e.to_string())),
        }
    }

    /// Samples an end-effector goal, solves IK and plans a collision-free
    /// trajectory, trying up to `samples_per_action` goals. On failure the
    /// violation from the furthest stage reached is returned.
    pub fn refine_action(&self, action: &GroundAction, world: &WorldState, rng: &mut impl Rng, site: FaultSite) -> Result<ActionBinding, Failure> {
        let start = world.robot_config;
        if ActionKind::of(action) == ActionKind::Flag {
            for stage in [Stage::Goal, Stage::Ik, Stage::Motion] {
                site.check(stage, action).map_err(|violation| Failure { ee_goal: None, violation })?;
            }
            return Ok(ActionBinding {
                action: action.clone(),
                ee_goal: self.robot.forward_kinematics(&start),
                start_config: start,
                goal_config: start,
                trajectory: Trajectory { waypoints: vec![start], attached: world.held().map(str::to_string) },
            });
        }
        let mut best: Option<Failure> = None;
        let mut motion_calls = 0;
        for _ in 0..self.config.samples_per_action.max(1) {
            let ee_goal = match site.check(Stage::Goal, action).and_then(|_| self.sample_ee_goal(action, world, rng)) {
                Ok(p) => p,
                Err(violation) => {
                    best = furthest(best, Failure { ee_goal: None, violation });
                    continue;
                }
            };
            let fail = |violation| Failure { ee_goal: Some(ee_goal), violation };
            let q = match site.check(Stage::Ik, action) {
                Err(v) => Err(v),
                Ok(()) => self
                    .robot
                    .inverse_kinematics(&ee_goal, &start, rng)
                    .map_err(|_| ViolationKind::new(Category::IkFailure, None, format!("no IK solution for {}", action.label()))),
            };
            let q = match q {
                Ok(q) => q,
                Err(v) => {
                    best = furthest(best, fail(v));
                    continue;
                }
            };
            if motion_calls == MOTION_ATTEMPTS {
                break;
            }
            motion_calls += 1;
            let traj = site.check(Stage::Motion, action).and_then(|_| self.motion(world, q, rng));
            match traj {
                Ok(trajectory) => {
                    return Ok(ActionBinding { action: action.clone(), ee_goal, start_config: start, goal_config: q, trajectory });
                }
                Err(v) => best = furthest(best, fail(v)),
            }
        }
        Err(best.unwrap_or_else(|| Failure {
            ee_goal: None,
            violation: ViolationKind::new(Category::GoalCollision, None, "no end-effector goal sampled"),
        }))
    }
}

/// Movable objects of the problem: every object that is not a region of
/// the scene.
fn movable_objects(problem: &ProblemDef, scene: &Scene) -> Vec<String> {
    problem.objects.iter().filter(|o| !scene.regions.contains(&o.name)).map(|o| o.name.clone()).collect()
}

const PALETTE: [[u8; 3]; 8] =
    [[200, 50, 50], [50, 160, 60], [50, 90, 200], [220, 180, 40], [160, 60, 180], [40, 170, 170], [230, 120, 40], [120, 80, 40]];

/// What each movable object rests on according to `s0`.
fn supports(domain: &DomainDef, s0: &SymbolicState, scene: &Scene, movable: &[String]) -> Result<BTreeMap<String, String>, PlanError> {
    let stacking = domain.predicate("on-table").is_some();
    let table = table_id(scene);
    let mut out: BTreeMap<String, String> = BTreeMap::new();
    let mut set = |a: &str, b: String| -> Result<(), PlanError> {
        if a == b {
            return Err(PlanError::Unsatisfiable(format!("{a} cannot rest on itself")));
        }
        if let Some(prev) = out.insert(a.to_string(), b.clone()) {
            return Err(PlanError::Unsatisfiable(format!("{a} rests on both {prev} and {b}")));
        }
        Ok(())
    };
    for atom in s0.iter() {
        match (atom.predicate.as_str(), atom.args.as_slice()) {
            ("on", [a, b]) => set(a, b.clone())?,
            ("on-table", [a]) if stacking => {
                set(a, table.clone().ok_or_else(|| PlanError::Unsatisfiable("the scene has no support region".into()))?)?
            }
            ("holding", _) => return Err(PlanError::Unsatisfiable("initial states with a held object are not supported".into())),
            _ => {}
        }
    }
    for (a, b) in &out {
        if !movable.contains(a) {
            return Err(PlanError::Unsatisfiable(format!("{a} is a region and cannot rest on {b}")));
        }
        if scene.get(b).is_none() && !movable.contains(b) {
            return Err(PlanError::Unsatisfiable(format!("{b} is not in the scene")));
        }
    }
    Ok(out)
}

/// A world whose geometry and flags satisfy `s0`. The template scene is used
/// as is when it already does; otherwise objects are placed at random on
/// their supports. Objects missing from the template become 4 cm cubes.
pub fn init_root(
    domain: &DomainDef,
    problem: &ProblemDef,
    template: &Scene,
    robot: &RobotModel,
    rng: &mut impl Rng,
) -> Result<WorldState, PlanError> {
    let s0 = &problem.init;
    let mut scene = template.clone();
    let movable = movable_objects(problem, &scene);
    for (i, id) in movable.iter().enumerate() {
        if scene.get(id).is_none() {
            let half = Vec3::new(DEFAULT_HALF, DEFAULT_HALF, DEFAULT_HALF);
            scene.insert(BoxObject::new(id, half, Pose::new(0.0, 0.0, -1.0, 0.0), PALETTE[i % PALETTE.len()]));
        }
    }
    let support = supports(domain, s0, &scene, &movable)?;
    let mut flags: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for a in s0.iter().filter(|a| !is_geometric(&a.predicate) && a.args.len() == 1) {
        flags.entry(a.args[0].clone()).or_default().insert(a.predicate.clone());
    }
    let finish = |scene: Scene| {
        let settled = settle(&scene, None).scene;
        let mut w = WorldState::new(settled, home_config());
        w.flags = flags.clone();
        w
    };

    let w = finish(scene.clone());
    if consistent(&w, s0, domain) && robot_free(robot, &w) {
        return Ok(w);
    }

    // Bottom-up placement order.
    let mut order: Vec<String> = Vec::new();
    let mut pending: Vec<&String> = movable.iter().filter(|m| support.contains_key(*m)).collect();
    while !pending.is_empty() {
        let before = pending.len();
        pending.retain(|m| {
            let s = &support[*m];
            if scene.regions.contains(s) || order.contains(s) {
                order.push((*m).clone());
                false
            } else {
                true
            }
        });
        if pending.len() == before {
            return Err(PlanError::Unsatisfiable(format!("cyclic support among {}", pending.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "))));
        }
    }

    'attempt: for _ in 0..INIT_SAMPLES {
        let mut s = scene.clone();
        for id in &order {
            s.objects.remove(id);
        }
        for id in &order {
            let obj = scene.objects[id].clone();
            let sup = s.objects[&support[id]].clone();
            let region = s.regions.contains(&sup.id);
            let pose = if region {
                let mut found = None;
                for _ in 0..50 {
                    let Some(p) = sample_on(robot, &obj, &sup, true, 0.0, rng) else { continue };
                    let mut placed = obj.clone();
                    placed.pose = p;
                    if !s.objects.values().any(|o| o.id != sup.id && box_box_collide(&placed, o, INIT_GAP)) {
                        found = Some(p);
                        break;
                    }
                }
                match found {
                    Some(p) => p,
                    None => continue 'attempt,
                }
            } else {
                let c = sup.pose.position;
                Pose::new(c.x, c.y, sup.top_z() + obj.half_extents.z, sup.pose.yaw)
            };
            let mut placed = obj;
            placed.pose = pose;
            s.insert(placed);
        }
        let w = finish(s);
        if consistent(&w, s0, domain) && robot_free(robot, &w) {
            return Ok(w);
        }
    }
    Err(PlanError::Unsatisfiable(format!("no world satisfying the initial state in {INIT_SAMPLES} samples")))
}

fn robot_free(robot: &RobotModel, w: &WorldState) -> bool {
    crate::motion::CollisionChecker::new(robot, &w.scene, None, MOTION_MARGIN).is_free(&w.robot_config)
}

/// Goal atoms that hold in `world`.
pub fn goal_holds(world: &WorldState, goal: &BTreeSet<GroundAtom>, domain: &DomainDef) -> bool {
    let eval = crate::sim::evaluate_predicates(world, domain);
    goal.iter().all(|g| eval.contains(g))
}
