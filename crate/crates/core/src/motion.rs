//! RRT-Connect in the joint space of the arm, trajectory validation and
//! shortcutting.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{box_box_collide, first_hit, BoxObject, Pose, Scene, CONTACT_TOLERANCE};
use crate::robot::{link_index, links_self_collide, Config, RobotModel, GRIPPER_LINK};

/// Largest joint-space distance covered by one tree extension.
pub const EXTEND_STEP: f64 = 0.15;
/// Largest per-joint change between two collision checks.
pub const RESOLUTION: f64 = 0.02;
pub const DEFAULT_MAX_ITERS: usize = 5_000;
pub const DEFAULT_SHORTCUTS: usize = 100;

pub const FLOOR: &str = "floor";
pub const SELF: &str = "robot";
pub const LIMITS: &str = "joint-limits";

/// An object carried by the gripper. `grasp` is its pose in the
/// end-effector frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub object: String,
    pub grasp: Pose,
}

/// Piecewise-linear joint-space path. The parameter runs over `[0, 1]` in
/// proportion to joint-space arc length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<Config>,
    #[serde(default)]
    pub attached: Option<String>,
}

impl Trajectory {
    pub fn start(&self) -> &Config {
        &self.waypoints[0]
    }

    pub fn end(&self) -> &Config {
        self.waypoints.last().expect("trajectory has waypoints")
    }

    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| w[0].distance(&w[1])).sum()
    }

    pub fn sample(&self, t: f64) -> Config {
        let total = self.length();
        if total == 0.0 {
            return self.waypoints[0];
        }
        let mut left = t.clamp(0.0, 1.0) * total;
        for w in self.waypoints.windows(2) {
            let d = w[0].distance(&w[1]);
            if left <= d && d > 0.0 {
                return w[0].lerp(&w[1], left / d);
            }
            left -= d;
        }
        *self.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub parameter: f64,
    pub config: Config,
    pub pair: (String, String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MotionError {
    #[error("start configuration collides: {0:?}")]
    StartInCollision((String, String)),
    #[error("goal configuration collides: {0:?}")]
    GoalInCollision((String, String)),
    #[error("no path found within {0} iterations")]
    NoPath(usize),
}

pub struct MotionRequest<'a> {
    pub robot: &'a RobotModel,
    pub scene: &'a Scene,
    pub start: Config,
    pub goal: Config,
    pub attached: Option<&'a Attachment>,
    pub margin: f64,
}

impl MotionRequest<'_> {
    pub fn checker(&self) -> CollisionChecker<'_> {
        CollisionChecker::new(self.robot, self.scene, self.attached, self.margin)
    }
}

/// Configuration validity against one scene: joint limits, self collision,
/// floor, obstacles and the carried object.
pub struct CollisionChecker<'a> {
    robot: &'a RobotModel,
    scene: &'a Scene,
    attached: Option<(&'a Attachment, &'a BoxObject)>,
    margin: f64,
}

impl<'a> CollisionChecker<'a> {
    /// An attachment naming an object missing from the scene is ignored.
    pub fn new(robot: &'a RobotModel, scene: &'a Scene, attached: Option<&'a Attachment>, margin: f64) -> Self {
        let attached = attached.and_then(|a| scene.get(&a.object).map(|o| (a, o)));
        CollisionChecker { robot, scene, attached, margin }
    }

    pub fn attached_id(&self) -> Option<&str> {
        self.attached.map(|(a, _)| a.object.as_str())
    }

    /// The carried object posed at `q`.
    pub fn attached_box(&self, q: &Config) -> Option<BoxObject> {
        self.attached.map(|(a, o)| {
            let mut b = o.clone();
            b.pose = self.robot.forward_kinematics(q).compose(&a.grasp);
            b
        })
    }

    /// First colliding pair at `q`, if any.
    pub fn check(&self, q: &Config) -> Option<(String, String)> {
        if !self.robot.within_limits(q) {
            return Some((LIMITS.into(), SELF.into()));
        }
        let links = self.robot.link_collision_boxes_at(q);
        if links_self_collide(&links) {
            return Some((SELF.into(), SELF.into()));
        }
        let floor = self.scene.bounds.min.z - CONTACT_TOLERANCE;
        if let Some(l) = links.iter().find(|l| l.bottom_z() < floor) {
            return Some((l.id.clone(), FLOOR.into()));
        }
        let held = self.attached_id();
        if let Some(hit) = first_hit(&links, self.scene, self.margin, &|_, o| Some(o) == held) {
            return Some(hit);
        }
        let carried = self.attached_box(q)?;
        if carried.bottom_z() < floor {
            return Some((carried.id.clone(), FLOOR.into()));
        }
        for o in self.scene.objects.values() {
            // Resting on or hovering above a surface is not a collision.
            if o.id == carried.id || carried.bottom_z() >= o.top_z() - CONTACT_TOLERANCE {
                continue;
            }
            if box_box_collide(&carried, o, self.margin) {
                return Some((carried.id.clone(), o.id.clone()));
            }
        }
        links
            .iter()
            .filter(|l| link_index(&l.id) != Some(GRIPPER_LINK))
            .find(|l| box_box_collide(l, &carried, self.margin))
            .map(|l| (l.id.clone(), carried.id.clone()))
    }

    pub fn is_free(&self, q: &Config) -> bool {
        self.check(q).is_none()
    }

    /// First collision on the straight segment `a -> b` (excluding `a`), as the
    /// fraction of the segment and the pair.
    fn segment(&self, a: &Config, b: &Config) -> Option<(f64, Config, (String, String))> {
        let n = (a.max_delta(b) / RESOLUTION).ceil().max(1.0) as usize;
        (1..=n).find_map(|i| {
            let t = i as f64 / n as f64;
            let q = if i == n { *b } else { a.lerp(b, t) };
            self.check(&q).map(|p| (t, q, p))
        })
    }

    pub fn segment_free(&self, a: &Config, b: &Config) -> bool {
        self.segment(a, b).is_none()
    }
}

/// Inserts intermediate waypoints so no joint moves more than `resolution`
/// between consecutive ones.
pub fn densify(waypoints: &[Config], resolution: f64) -> Vec<Config> {
    let mut out = vec![waypoints[0]];
    for w in waypoints.windows(2) {
        let n = (w[0].max_delta(&w[1]) / resolution).ceil().max(1.0) as usize;
        out.extend((1..n).map(|i| w[0].lerp(&w[1], i as f64 / n as f64)));
        out.push(w[1]);
    }
    out
}

/// Checks every configuration along the path at `RESOLUTION` and reports the
/// earliest collision.
pub fn validate_trajectory(traj: &Trajectory, checker: &CollisionChecker) -> Result<(), CollisionReport> {
    let total = traj.length();
    let param = |travelled: f64| if total > 0.0 { travelled / total } else { 0.0 };
    if let Some(pair) = checker.check(traj.start()) {
        return Err(CollisionReport { parameter: 0.0, config: *traj.start(), pair });
    }
    let mut travelled = 0.0;
    for w in traj.waypoints.windows(2) {
        let d = w[0].distance(&w[1]);
        if let Some((t, config, pair)) = checker.segment(&w[0], &w[1]) {
            return Err(CollisionReport { parameter: param(travelled + t * d), config, pair });
        }
        travelled += d;
    }
    Ok(())
}

struct Tree {
    nodes: Vec<Config>,
    parent: Vec<usize>,
}

enum Extend {
    Trapped,
    Advanced(usize),
    Reached(usize),
}

impl Tree {
    fn new(root: Config) -> Tree {
        Tree { nodes: vec![root], parent: vec![0] }
    }

    fn nearest(&self, q: &Config) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = n.distance(q);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    fn extend(&mut self, target: &Config, checker: &CollisionChecker) -> Extend {
        let near = self.nearest(target);
        let from = self.nodes[near];
        let d = from.distance(target);
        let (new, reached) = if d <= EXTEND_STEP { (*target, true) } else { (from.lerp(target, EXTEND_STEP / d), false) };
        if !checker.segment_free(&from, &new) {
            return Extend::Trapped;
        }
        self.nodes.push(new);
        self.parent.push(near);
        let id = self.nodes.len() - 1;
        if reached {
            Extend::Reached(id)
        } else {
            Extend::Advanced(id)
        }
    }

    fn connect(&mut self, target: &Config, checker: &CollisionChecker) -> Option<usize> {
        loop {
            match self.extend(target, checker) {
                Extend::Trapped => return None,
                Extend::Reached(id) => return Some(id),
                Extend::Advanced(_) => {}
            }
        }
    }

    /// Node configurations from the root to `id`.
    fn path_to(&self, mut id: usize) -> Vec<Config> {
        let mut out = vec![self.nodes[id]];
        while id != 0 {
            id = self.parent[id];
            out.push(self.nodes[id]);
        }
        out.reverse();
        out
    }
}

/// Bidirectional RRT with a connect heuristic. The returned waypoints are
/// densified to `RESOLUTION`.
pub fn plan_rrt_connect(req: &MotionRequest, rng: &mut impl Rng, max_iters: usize) -> Result<Trajectory, MotionError> {
    let checker = req.checker();
    if let Some(p) = checker.check(&req.start) {
        return Err(MotionError::StartInCollision(p));
    }
    if let Some(p) = checker.check(&req.goal) {
        return Err(MotionError::GoalInCollision(p));
    }
    let attached = checker.attached_id().map(str::to_string);
    let finish = |sparse: Vec<Config>| Trajectory { waypoints: densify(&sparse, RESOLUTION), attached: attached.clone() };
    if checker.segment_free(&req.start, &req.goal) {
        return Ok(finish(vec![req.start, req.goal]));
    }

    let mut a = Tree::new(req.start);
    let mut b = Tree::new(req.goal);
    let mut a_is_start = true;
    for _ in 0..max_iters {
        let sample = req.robot.random_config(rng);
        let new = match a.extend(&sample, &checker) {
            Extend::Trapped => None,
            Extend::Advanced(id) | Extend::Reached(id) => Some(id),
        };
        if let Some(id) = new {
            if let Some(other) = b.connect(&a.nodes[id], &checker) {
                let mut head = a.path_to(id);
                let mut tail = b.path_to(other);
                tail.pop();
                tail.reverse();
                head.extend(tail);
                if !a_is_start {
                    head.reverse();
                }
                return Ok(finish(head));
            }
        }
        std::mem::swap(&mut a, &mut b);
        a_is_start = !a_is_start;
    }
    Err(MotionError::NoPath(max_iters))
}

/// Random shortcutting: replaces the path between two random waypoints with
/// a straight segment when it is collision free and strictly shorter.
pub fn shortcut(traj: &Trajectory, checker: &CollisionChecker, rng: &mut impl Rng, attempts: usize) -> Trajectory {
    let mut pts = traj.waypoints.clone();
    for _ in 0..attempts {
        if pts.len() < 3 {
            break;
        }
        let i = rng.random_range(0..pts.len() - 2);
        let j = rng.random_range(i + 2..pts.len());
        let along: f64 = pts[i..=j].windows(2).map(|w| w[0].distance(&w[1])).sum();
        if pts[i].distance(&pts[j]) < along - 1e-9 && checker.segment_free(&pts[i], &pts[j]) {
            pts.drain(i + 1..j);
        }
    }
    // Re-densifying reproduces exactly the configurations checked above.
    Trajectory { waypoints: densify(&pts, RESOLUTION), attached: traj.attached.clone() }
}

#[cfg(test)]
mod tests;
