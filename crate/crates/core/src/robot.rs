//! A 5-DOF yaw-pitch-pitch-pitch-yaw arm: forward kinematics, damped
//! least-squares inverse kinematics and posed link collision boxes.
//!
//! Joint 0 turns the whole arm about the vertical axis of the base. A
//! vertical column of length `L0` carries the shoulder; joints 1-3 pitch the
//! upper arm, forearm and tool in the vertical plane, with angles accumulated
//! from the horizontal. Joint 4 turns the gripper about the tool axis, so the
//! end-effector yaw is `base yaw + q0 + q4`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix4, SMatrix, Vector4, Vector5};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{box_box_collide, normalize_angle, BoxObject, Pose, Vec3};

pub const DOF: usize = 5;
pub const IK_POSITION_TOLERANCE: f64 = 1e-3;
pub const IK_YAW_TOLERANCE: f64 = 0.01;
const IK_DAMPING: f64 = 0.05;
const IK_ITERATIONS: usize = 200;
const IK_RESTARTS: usize = 8;
const NULL_GAIN: f64 = 0.3;
const MAX_STEP: f64 = 0.3;
/// Collision boxes cover a link in pieces no longer than this.
const SEGMENT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Config(pub [f64; DOF]);

impl Config {
    pub fn zeros() -> Config {
        Config([0.0; DOF])
    }

    pub fn distance(&self, other: &Config) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    /// Largest per-joint difference.
    pub fn max_delta(&self, other: &Config) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn lerp(&self, other: &Config, t: f64) -> Config {
        let mut out = [0.0; DOF];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.0[i] + (other.0[i] - self.0[i]) * t;
        }
        Config(out)
    }

    fn vector(&self) -> Vector5<f64> {
        Vector5::from_row_slice(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub base_pose: Pose,
    /// Column, upper arm, forearm, tool.
    pub link_lengths: [f64; 4],
    pub joint_limits: [(f64, f64); DOF],
    /// Half thickness of each link's collision boxes.
    pub link_half_width: [f64; 4],
    pub gripper_reach: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IkFailure;

impl Default for RobotModel {
    fn default() -> Self {
        RobotModel {
            base_pose: Pose::new(0.0, -0.38, 0.0, FRAC_PI_2),
            link_lengths: [0.30, 0.40, 0.40, 0.10],
            joint_limits: [(-2.6, 2.6), (-0.6, 2.2), (-2.8, 2.8), (-2.8, 2.8), (-PI, PI)],
            link_half_width: [0.03, 0.02, 0.018, 0.012],
            gripper_reach: 0.015,
        }
    }
}

/// Planar chain state for one configuration.
struct Chain {
    azimuth: f64,
    phi: [f64; 3],
    /// Radial/vertical coordinates of shoulder, elbow, wrist, end effector,
    /// relative to the base.
    points: [(f64, f64); 4],
}

impl RobotModel {
    fn chain(&self, q: &Config) -> Chain {
        let [l0, l1, l2, l3] = self.link_lengths;
        let phi1 = q.0[1];
        let phi2 = phi1 + q.0[2];
        let phi3 = phi2 + q.0[3];
        let mut points = [(0.0, l0); 4];
        for (i, (phi, l)) in [(phi1, l1), (phi2, l2), (phi3, l3)].into_iter().enumerate() {
            let (r, z) = points[i];
            points[i + 1] = (r + l * phi.cos(), z + l * phi.sin());
        }
        Chain { azimuth: self.base_pose.yaw + q.0[0], phi: [phi1, phi2, phi3], points }
    }

    fn world(&self, azimuth: f64, r: f64, z: f64) -> Vec3 {
        let (s, c) = azimuth.sin_cos();
        self.base_pose.position + Vec3::new(r * c, r * s, z)
    }

    pub fn within_limits(&self, q: &Config) -> bool {
        q.0.iter().zip(&self.joint_limits).all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    pub fn clamp(&self, q: &Config) -> Config {
        let mut out = q.0;
        for (v, (lo, hi)) in out.iter_mut().zip(&self.joint_limits) {
            *v = v.clamp(*lo, *hi);
        }
        Config(out)
    }

    pub fn random_config(&self, rng: &mut impl Rng) -> Config {
        let mut out = [0.0; DOF];
        for (v, (lo, hi)) in out.iter_mut().zip(&self.joint_limits) {
            *v = rng.random_range(*lo..*hi);
        }
        Config(out)
    }

    /// End-effector pose: tool tip position and gripper yaw.
    pub fn forward_kinematics(&self, q: &Config) -> Pose {
        let ch = self.chain(q);
        let (r, z) = ch.points[3];
        Pose { position: self.world(ch.azimuth, r, z), yaw: normalize_angle(ch.azimuth + q.0[4]) }
    }

    /// Pitch of the tool link from the horizontal (-pi/2 points straight down).
    pub fn tool_pitch(&self, q: &Config) -> f64 {
        q.0[1] + q.0[2] + q.0[3]
    }

    /// Bound on end-effector displacement per unit of joint-space distance.
    pub fn lipschitz_bound(&self) -> f64 {
        let [_, l1, l2, l3] = self.link_lengths;
        let reach = l1 + l2 + l3;
        (reach * reach + reach * reach + (l2 + l3) * (l2 + l3) + l3 * l3).sqrt()
    }

    /// Rows: x, y, z, yaw.
    fn jacobian(&self, q: &Config) -> SMatrix<f64, 4, 5> {
        let ch = self.chain(q);
        let [_, l1, l2, l3] = self.link_lengths;
        let (s, c) = ch.azimuth.sin_cos();
        let radial = Vec3::new(c, s, 0.0);
        let tangent = Vec3::new(-s, c, 0.0);
        let r = ch.points[3].0;
        let mut j = SMatrix::<f64, 4, 5>::zeros();
        let d0 = tangent * r;
        j.fixed_view_mut::<3, 1>(0, 0).copy_from(&d0);
        let terms = [(ch.phi[0], l1), (ch.phi[1], l2), (ch.phi[2], l3)];
        for col in 1..4 {
            let mut dr = 0.0;
            let mut dz = 0.0;
            for &(phi, l) in &terms[col - 1..] {
                dr -= l * phi.sin();
                dz += l * phi.cos();
            }
            let d = radial * dr + Vec3::z() * dz;
            j.fixed_view_mut::<3, 1>(0, col).copy_from(&d);
        }
        j[(3, 0)] = 1.0;
        j[(3, 4)] = 1.0;
        j
    }

    fn residual(&self, q: &Config, target: &Pose) -> Vector4<f64> {
        let p = self.forward_kinematics(q);
        let d = target.position - p.position;
        Vector4::new(d.x, d.y, d.z, normalize_angle(target.yaw - p.yaw))
    }

    fn converged(e: &Vector4<f64>) -> bool {
        e.fixed_rows::<3>(0).norm() <= IK_POSITION_TOLERANCE && e[3].abs() <= IK_YAW_TOLERANCE
    }

    fn solve_from(&self, start: Config, target: &Pose) -> Option<Config> {
        let mut q = start;
        let lambda2 = IK_DAMPING * IK_DAMPING;
        let pitch_grad = Vector5::new(0.0, 1.0, 1.0, 1.0, 0.0);
        let mut best: Option<(f64, Config)> = None;
        for _ in 0..IK_ITERATIONS {
            let e = self.residual(&q, target);
            let pitch_err = self.tool_pitch(&q) + FRAC_PI_2;
            if Self::converged(&e) {
                if best.is_none_or(|(b, _)| pitch_err.abs() < b) {
                    best = Some((pitch_err.abs(), q));
                }
                if pitch_err.abs() < 1e-3 {
                    break;
                }
            }
            let j = self.jacobian(&q);
            let jt = j.transpose();
            let inv = (j * jt + Matrix4::identity() * lambda2).try_inverse()?;
            let pinv = jt * inv;
            let mut step = pinv * e;
            if Self::converged(&e) {
                let projector = SMatrix::<f64, 5, 5>::identity() - pinv * j;
                step += projector * (pitch_grad * (-NULL_GAIN * pitch_err));
            }
            let norm = step.norm();
            if norm > MAX_STEP {
                step *= MAX_STEP / norm;
            }
            let next = q.vector() + step;
            let mut raw = [0.0; DOF];
            raw.copy_from_slice(next.as_slice());
            raw[0] = normalize_angle(raw[0]);
            raw[4] = normalize_angle(raw[4]);
            q = self.clamp(&Config(raw));
        }
        best.map(|(_, q)| q)
    }

    /// Damped least squares on the (position, yaw) residual from `seed`, then
    /// from up to eight random restarts. Redundancy is spent on keeping the
    /// tool vertical.
    pub fn inverse_kinematics(&self, target: &Pose, seed: &Config, rng: &mut impl Rng) -> Result<Config, IkFailure> {
        let [l0, l1, l2, l3] = self.link_lengths;
        let rel = target.position - self.base_pose.position;
        let horizontal = (rel.x * rel.x + rel.y * rel.y).sqrt();
        let reach = ((horizontal * horizontal) + (rel.z - l0).powi(2)).sqrt();
        if reach > l1 + l2 + l3 + IK_POSITION_TOLERANCE {
            return Err(IkFailure);
        }
        if let Some(q) = self.solve_from(self.clamp(seed), target) {
            return Ok(q);
        }
        // Restarts face the target, or face away and reach back over the top.
        let facing = normalize_angle(rel.y.atan2(rel.x) - self.base_pose.yaw);
        let (lo, hi) = self.joint_limits[0];
        let headings: Vec<(f64, bool)> = [(facing, false), (normalize_angle(facing + PI), true)]
            .into_iter()
            .filter(|(h, _)| lo <= *h && *h <= hi)
            .collect();
        for i in 0..IK_RESTARTS {
            let mut start = self.random_config(rng);
            if let Some(&(heading, over)) = headings.get(i % (headings.len() + 1)) {
                start.0[0] = heading;
                if over {
                    start.0[1] = rng.random_range(FRAC_PI_2..self.joint_limits[1].1);
                }
            }
            if let Some(q) = self.solve_from(start, target) {
                return Ok(q);
            }
        }
        Err(IkFailure)
    }

    /// Collision boxes of every link at `q`. Each link is cut into pieces of
    /// at most five centimetres; each piece is the bounding box, in the arm's
    /// vertical plane, of the thickened segment. Ids are `link{i}.{k}`.
    pub fn link_collision_boxes_at(&self, q: &Config) -> Vec<BoxObject> {
        let ch = self.chain(q);
        let mut out = Vec::new();
        let base = (0.0, 0.0);
        let starts = [base, ch.points[0], ch.points[1], ch.points[2]];
        let ends = ch.points;
        for link in 0..4 {
            let (ra, za) = starts[link];
            let (rb, zb) = ends[link];
            let len = ((rb - ra).powi(2) + (zb - za).powi(2)).sqrt();
            let pieces = ((len / SEGMENT).ceil() as usize).max(1);
            let w = self.link_half_width[link];
            let (dir_s, dir_c) = if len > 0.0 { ((zb - za) / len, (rb - ra) / len) } else { (1.0, 0.0) };
            for k in 0..pieces {
                let t0 = k as f64 / pieces as f64;
                let t1 = (k + 1) as f64 / pieces as f64;
                let (r0, z0) = (ra + (rb - ra) * t0, za + (zb - za) * t0);
                let (r1, z1) = (ra + (rb - ra) * t1, za + (zb - za) * t1);
                let half_r = (r1 - r0).abs() / 2.0 + w * dir_s.abs();
                let half_z = (z1 - z0).abs() / 2.0 + w * dir_c.abs();
                let center = self.world(ch.azimuth, (r0 + r1) / 2.0, (z0 + z1) / 2.0);
                out.push(BoxObject::new(
                    &format!("link{link}.{k}"),
                    Vec3::new(half_r, w, half_z),
                    Pose { position: center, yaw: normalize_angle(ch.azimuth) },
                    LINK_COLORS[link],
                ));
            }
        }
        out
    }

    /// Overlap between links that are not adjacent in the chain.
    pub fn self_collision(&self, q: &Config) -> bool {
        links_self_collide(&self.link_collision_boxes_at(q))
    }
}

/// Self collision over boxes from `link_collision_boxes_at`.
pub fn links_self_collide(boxes: &[BoxObject]) -> bool {
    let link_of = |b: &BoxObject| b.id.as_bytes()[4] - b'0';
    for (i, a) in boxes.iter().enumerate() {
        for b in &boxes[i + 1..] {
            if link_of(b) >= link_of(a) + 2 && box_box_collide(a, b, 0.0) {
                return true;
            }
        }
    }
    false
}

/// Link index encoded in a collision box id, if it is one.
pub fn link_index(id: &str) -> Option<usize> {
    id.strip_prefix("link").and_then(|r| r.split('.').next()).and_then(|d| d.parse().ok())
}

pub const GRIPPER_LINK: usize = 3;
const LINK_COLORS: [[u8; 3]; 4] = [[90, 90, 100], [120, 120, 135], [150, 150, 165], [60, 60, 70]];
