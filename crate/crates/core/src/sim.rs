//! Quasi-static execution of grounded actions.
//!
//! Objects drop straight down until their centre of mass is over a support;
//! nothing tips or slides. Grasp, release and collapse failures are read off
//! the outcome of a step rather than from simulated forces.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geom::{is_resting_on, resting_contacts, scene_in_collision, BoxObject, Pose, Scene, CONTACT_TOLERANCE};
use crate::motion::{Attachment, Trajectory};
use crate::pddl::{apply, DomainDef, GroundAction, GroundAtom, SymbolicState};
use crate::robot::{Config, RobotModel};

/// A released object that moves further than this has not been placed.
pub const RELEASE_THRESHOLD: f64 = 5e-3;
/// Largest end-effector travel per trajectory step the grasp survives.
pub const SLIP_STEP: f64 = 0.05;
pub const SETTLE_ITERATIONS: usize = 100;
/// Support skin around top faces when testing the centre of mass.
pub const SUPPORT_SKIN: f64 = 1e-3;
/// Support surface that Blocksworld's `on-table` refers to.
pub const TABLE: &str = "table";

const GEOMETRIC: [&str; 5] = ["on", "on-table", "clear", "holding", "arm-empty"];

/// The world together with the robot that acts in it, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub scene: Scene,
    #[serde(default)]
    pub robot: RobotModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub scene: Scene,
    pub robot_config: Config,
    #[serde(default)]
    pub attachment: Option<Attachment>,
    /// Non-geometric unary facts per object, such as `cleaned`.
    #[serde(default)]
    pub flags: BTreeMap<String, BTreeSet<String>>,
}

impl WorldState {
    pub fn new(scene: Scene, robot_config: Config) -> WorldState {
        WorldState { scene, robot_config, attachment: None, flags: BTreeMap::new() }
    }

    pub fn held(&self) -> Option<&str> {
        self.attachment.as_ref().map(|a| a.object.as_str())
    }

    /// Moves the arm, carrying any attached object along.
    pub fn set_config(&mut self, robot: &RobotModel, q: Config) {
        self.robot_config = q;
        if let Some(a) = &self.attachment {
            let pose = robot.forward_kinematics(&q).compose(&a.grasp);
            if let Some(o) = self.scene.objects.get_mut(&a.object) {
                o.pose = pose;
            }
        }
    }

    pub fn has_flag(&self, object: &str, flag: &str) -> bool {
        self.flags.get(object).is_some_and(|f| f.contains(flag))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    GoalCollision,
    IkFailure,
    MotionFailure,
    ExecutionInconsistency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Detail {
    GraspSlip,
    ReleaseDisplacement,
    Collapse,
    Unsupported,
    CollisionPair,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationKind {
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<Detail>,
    pub message: String,
}

impl ViolationKind {
    pub fn new(category: Category, detail: Option<Detail>, message: impl Into<String>) -> ViolationKind {
        ViolationKind { category, detail, message: message.into() }
    }

    fn execution(detail: Detail, message: impl Into<String>) -> ViolationKind {
        ViolationKind::new(Category::ExecutionInconsistency, Some(detail), message)
    }
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cat = serde_json::to_value(self.category).expect("serializable");
        write!(f, "{}", cat.as_str().unwrap_or_default())?;
        if let Some(d) = self.detail {
            let d = serde_json::to_value(d).expect("serializable");
            write!(f, "/{}", d.as_str().unwrap_or_default())?;
        }
        write!(f, ": {}", self.message)
    }
}

/// A symbolic action refined with continuous parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBinding {
    pub action: GroundAction,
    pub ee_goal: Pose,
    pub start_config: Config,
    pub goal_config: Config,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub next: WorldState,
    pub violations: Vec<ViolationKind>,
    pub displacement_report: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settled {
    pub scene: Scene,
    pub displacement: BTreeMap<String, f64>,
    /// Objects that ended on the floor.
    pub collapsed: Vec<String>,
}

/// How an action touches the world.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActionKind {
    Grasp { object: String },
    Place { object: String, onto: String },
    /// Sets the action's unary, non-geometric add effects on objects resting
    /// where the preconditions say.
    Flag,
}

impl ActionKind {
    pub fn of(action: &GroundAction) -> ActionKind {
        let arg = |i: usize| action.args.get(i).cloned().unwrap_or_default();
        match action.name.as_str() {
            "pickup" | "unstack" => ActionKind::Grasp { object: arg(0) },
            "putdown" if action.args.len() >= 2 => ActionKind::Place { object: arg(0), onto: arg(1) },
            "putdown" => ActionKind::Place { object: arg(0), onto: TABLE.to_string() },
            "stack" => ActionKind::Place { object: arg(0), onto: arg(1) },
            _ => ActionKind::Flag,
        }
    }
}

pub fn is_geometric(predicate: &str) -> bool {
    GEOMETRIC.contains(&predicate)
}

fn supports<'a>(scene: &'a Scene, obj: &BoxObject, skip: Option<&str>) -> impl Iterator<Item = &'a BoxObject> {
    let id = obj.id.clone();
    let skip = skip.map(str::to_string);
    let obj = obj.clone();
    scene
        .objects
        .values()
        .filter(move |o| o.id != id && Some(&o.id) != skip.as_ref() && is_resting_on(&obj, o))
}

/// `obj` rests on `support` and its centre of mass is over that support.
pub fn supported_by(obj: &BoxObject, support: &BoxObject) -> bool {
    let c = obj.pose.position;
    is_resting_on(obj, support) && support.footprint_contains(c.x, c.y, SUPPORT_SKIN)
}

/// Drops unsupported movable objects (other than `held`) until each rests
/// with its centre of mass over some top face, or on the floor.
pub fn settle(scene: &Scene, held: Option<&str>) -> Settled {
    let mut scene = scene.clone();
    let floor = scene.bounds.min.z;
    let mut displacement: BTreeMap<String, f64> = scene.objects.keys().map(|k| (k.clone(), 0.0)).collect();
    for _ in 0..SETTLE_ITERATIONS {
        let mut order: Vec<(f64, String)> = scene
            .movable()
            .filter(|o| Some(o.id.as_str()) != held)
            .map(|o| (o.bottom_z(), o.id.clone()))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let mut moved = false;
        for (_, id) in order {
            let obj = scene.objects[&id].clone();
            let on_floor = (obj.bottom_z() - floor).abs() <= CONTACT_TOLERANCE;
            if on_floor || supports(&scene, &obj, held).any(|s| supported_by(&obj, s)) {
                continue;
            }
            let c = obj.pose.position;
            let rest = scene
                .objects
                .values()
                .filter(|o| o.id != id && Some(o.id.as_str()) != held)
                .filter(|o| o.top_z() <= obj.bottom_z() + CONTACT_TOLERANCE && o.footprint_contains(c.x, c.y, SUPPORT_SKIN))
                .map(BoxObject::top_z)
                .fold(floor, f64::max);
            let z = rest + obj.half_extents.z;
            let drop = obj.pose.position.z - z;
            if drop.abs() > 0.0 {
                scene.objects.get_mut(&id).expect("present").pose.position.z = z;
                *displacement.get_mut(&id).expect("present") += drop.abs();
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    let collapsed = scene
        .movable()
        .filter(|o| Some(o.id.as_str()) != held && (o.bottom_z() - floor).abs() <= CONTACT_TOLERANCE)
        .filter(|o| !scene.objects.values().any(|s| s.id != o.id && s.fixed && supported_by(o, s)))
        .map(|o| o.id.clone())
        .collect();
    Settled { scene, displacement, collapsed }
}

/// Reads the geometric predicates of `domain` off the world, plus the flags.
///
/// When the vocabulary has `on-table`, `on` relates two movable objects and
/// `on-table` means resting on a support region; otherwise `on` relates a
/// movable object to the region it rests on.
pub fn evaluate_predicates(world: &WorldState, domain: &DomainDef) -> SymbolicState {
    let has = |p: &str| domain.predicate(p).is_some();
    let stacking = has("on-table");
    let held = world.held();
    let scene = &world.scene;
    let mut out = SymbolicState::new();
    let movable: Vec<&BoxObject> = scene.movable().filter(|o| Some(o.id.as_str()) != held).collect();
    for a in &movable {
        for b in scene.objects.values() {
            if a.id == b.id || Some(b.id.as_str()) == held || !supported_by(a, b) {
                continue;
            }
            let region = scene.regions.contains(&b.id);
            if stacking && !b.fixed && has("on") {
                out.insert(GroundAtom::new("on", &[&a.id, &b.id]));
            } else if stacking && region {
                out.insert(GroundAtom::new("on-table", &[&a.id]));
            } else if !stacking && region && has("on") {
                out.insert(GroundAtom::new("on", &[&a.id, &b.id]));
            }
        }
        if has("clear") && !movable.iter().any(|o| o.id != a.id && is_resting_on(o, a)) {
            out.insert(GroundAtom::new("clear", &[&a.id]));
        }
    }
    match held {
        Some(h) if has("holding") => {
            out.insert(GroundAtom::new("holding", &[h]));
        }
        None if has("arm-empty") => {
            out.insert(GroundAtom::new("arm-empty", &[]));
        }
        _ => {}
    }
    for (obj, flags) in &world.flags {
        for f in flags {
            if domain.predicate(f).is_some_and(|p| p.params.len() == 1) {
                out.insert(GroundAtom::new(f, &[obj]));
            }
        }
    }
    out
}

/// Geometric atoms of `s` all hold in the world, and the flag atoms match
/// exactly.
pub fn consistent(world: &WorldState, s: &SymbolicState, domain: &DomainDef) -> bool {
    let eval = evaluate_predicates(world, domain);
    let geometric = s.filtered(|a| is_geometric(&a.predicate));
    let flags = |st: &SymbolicState| st.filtered(|a| !is_geometric(&a.predicate));
    eval.is_superset(&geometric) && flags(&eval) == flags(s)
}

/// Steps the world through one refined action.
pub struct Simulator<'a> {
    pub robot: &'a RobotModel,
    pub domain: &'a DomainDef,
}

impl Simulator<'_> {
    pub fn execute(&self, world: &WorldState, binding: &ActionBinding) -> ExecutionOutcome {
        let action = &binding.action;
        let mut next = world.clone();
        let mut violations = Vec::new();
        let before = evaluate_predicates(world, self.domain);

        // Follow the trajectory; a carried object slips on a jerky step.
        let mut ee = self.robot.forward_kinematics(&next.robot_config).position;
        for q in &binding.trajectory.waypoints {
            next.set_config(self.robot, *q);
            let p = self.robot.forward_kinematics(q).position;
            if next.attachment.is_some() && (p - ee).norm() > SLIP_STEP {
                let id = next.held().unwrap_or_default().to_string();
                next.attachment = None;
                violations.push(ViolationKind::execution(
                    Detail::GraspSlip,
                    format!("{id} slipped: end effector moved {:.3} m in one step", (p - ee).norm()),
                ));
            }
            ee = p;
        }

        let mut released = None;
        if violations.is_empty() {
            match ActionKind::of(action) {
                ActionKind::Grasp { object } => {
                    if let Err(v) = self.grasp(&mut next, &object) {
                        violations.push(v);
                    }
                }
                ActionKind::Place { object, onto: _ } => {
                    if next.held() == Some(object.as_str()) {
                        next.attachment = None;
                        released = Some(object);
                    } else {
                        violations.push(ViolationKind::execution(Detail::Unsupported, format!("not holding {object}")));
                    }
                }
                ActionKind::Flag => {
                    let missing: Vec<String> =
                        action.precond_pos.iter().filter(|a| !before.contains(a)).map(|a| a.to_string()).collect();
                    if missing.is_empty() {
                        for add in action.add.iter().filter(|a| !is_geometric(&a.predicate) && a.args.len() == 1) {
                            next.flags.entry(add.args[0].clone()).or_default().insert(add.predicate.clone());
                        }
                    } else {
                        violations.push(ViolationKind::execution(
                            Detail::Unsupported,
                            format!("{} does not hold in the world", missing.join(" ")),
                        ));
                    }
                }
            }
        }

        let settled = settle(&next.scene, next.held());
        next.scene = settled.scene;
        let displacement = settled.displacement;
        if let Some(id) = &released {
            let d = displacement.get(id).copied().unwrap_or(0.0);
            if d > RELEASE_THRESHOLD {
                violations.push(ViolationKind::execution(
                    Detail::ReleaseDisplacement,
                    format!("{id} moved {d:.3} m after release"),
                ));
            }
        }
        for (id, d) in &displacement {
            if Some(id) != released.as_ref() && *d > RELEASE_THRESHOLD {
                violations.push(ViolationKind::execution(Detail::Collapse, format!("{id} fell {d:.3} m")));
            }
        }
        for id in &settled.collapsed {
            if Some(id) != released.as_ref() && displacement[id] <= RELEASE_THRESHOLD {
                violations.push(ViolationKind::execution(Detail::Collapse, format!("{id} ended on the floor")));
            }
        }
        let overlaps = scene_in_collision(&next.scene, &resting_contacts(&next.scene), 0.0);
        if let Some((a, b)) = overlaps.first() {
            violations.push(ViolationKind::execution(Detail::CollisionPair, format!("{a} intersects {b}")));
        }
        if violations.is_empty() {
            match apply(&before, action) {
                Ok(expected) if !consistent(&next, &expected, self.domain) => {
                    let got = evaluate_predicates(&next, self.domain);
                    let missing: Vec<String> = expected
                        .iter()
                        .filter(|a| is_geometric(&a.predicate) && !got.contains(a))
                        .map(|a| a.to_string())
                        .collect();
                    violations.push(ViolationKind::execution(
                        Detail::Unsupported,
                        format!("world does not show {}", missing.join(" ")),
                    ));
                }
                Ok(_) => {}
                Err(e) => violations.push(ViolationKind::execution(Detail::Unsupported, e.to_string())),
            }
        }
        ExecutionOutcome { next, violations, displacement_report: displacement }
    }

    /// Attaches `object` if the end effector is over its top face and within
    /// gripper reach of it.
    fn grasp(&self, world: &mut WorldState, object: &str) -> Result<(), ViolationKind> {
        let slip = |msg: String| ViolationKind::execution(Detail::GraspSlip, msg);
        if let Some(h) = world.held() {
            return Err(slip(format!("already holding {h}")));
        }
        let Some(obj) = world.scene.get(object).filter(|o| !o.fixed) else {
            return Err(slip(format!("{object} is not a movable object")));
        };
        let ee = self.robot.forward_kinematics(&world.robot_config);
        let p = ee.position;
        let gap = p.z - obj.top_z();
        if !obj.footprint_contains(p.x, p.y, 0.0) || !(0.0..=self.robot.gripper_reach).contains(&gap) {
            return Err(slip(format!("{object} is out of the gripper's reach ({gap:.3} m above its top)")));
        }
        let grasp = ee.inverse().compose(&obj.pose);
        world.attachment = Some(Attachment { object: object.to_string(), grasp });
        Ok(())
    }
}
