//! Kinodynamic task and motion planning.
//!
//! A top-k symbolic planner proposes plans over a PDDL domain; the hybrid
//! search refines each symbolic step with sampled end-effector goals, inverse
//! kinematics and RRT-Connect, validates it in a quasi-static simulator, and
//! asks an advisor to pick successors and backtrack targets.

pub mod advisor;
pub mod bench;
pub mod dgraph;
pub mod domains;
pub mod geom;
pub mod hybrid;
pub mod motion;
pub mod pddl;
pub mod render;
pub mod robot;
pub mod sim;
pub mod topk;
