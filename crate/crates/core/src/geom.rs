//! Rigid boxes with yaw-only rotation, and box collision queries.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// Vertical gap up to which two stacked faces count as resting contact.
pub const CONTACT_TOLERANCE: f64 = 1e-3;
pub const MOTION_MARGIN: f64 = 2e-3;
pub const PLACEMENT_MARGIN: f64 = 0.0;

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub yaw: f64,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Pose {
        Pose { position: Vec3::new(x, y, z), yaw: normalize_angle(yaw) }
    }

    pub fn identity() -> Pose {
        Pose { position: Vec3::zeros(), yaw: 0.0 }
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        let (s, c) = self.yaw.sin_cos();
        Vec3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
    }

    pub fn transform_point(&self, v: &Vec3) -> Vec3 {
        self.position + self.rotate(v)
    }

    /// `self * other`: `other` expressed in this frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose { position: self.transform_point(&other.position), yaw: normalize_angle(self.yaw + other.yaw) }
    }

    pub fn inverse(&self) -> Pose {
        let inv = Pose { position: Vec3::zeros(), yaw: -self.yaw };
        Pose { position: -inv.rotate(&self.position), yaw: normalize_angle(-self.yaw) }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite()) && self.yaw.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.max[i] && other.min[i] <= self.max[i])
    }

    pub fn contains_point(&self, p: &Vec3) -> bool {
        (0..3).all(|i| self.min[i] <= p[i] && p[i] <= self.max[i])
    }

    pub fn translated(&self, d: &Vec3) -> Aabb {
        Aabb { min: self.min + d, max: self.max + d }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxObject {
    pub id: String,
    pub half_extents: Vec3,
    pub pose: Pose,
    #[serde(default)]
    pub fixed: bool,
    #[serde(default = "default_mass")]
    pub mass: f64,
    pub color: [u8; 3],
}

fn default_mass() -> f64 {
    0.1
}

impl BoxObject {
    pub fn new(id: &str, half_extents: Vec3, pose: Pose, color: [u8; 3]) -> BoxObject {
        BoxObject { id: id.to_string(), half_extents, pose, fixed: false, mass: default_mass(), color }
    }

    pub fn fixed(mut self) -> BoxObject {
        self.fixed = true;
        self
    }

    pub fn top_z(&self) -> f64 {
        self.pose.position.z + self.half_extents.z
    }

    pub fn bottom_z(&self) -> f64 {
        self.pose.position.z - self.half_extents.z
    }

    /// World-frame bounding box, grown by `pad` on every side.
    pub fn aabb(&self, pad: f64) -> Aabb {
        let (s, c) = self.pose.yaw.sin_cos();
        let h = self.half_extents;
        let ext = Vec3::new(c.abs() * h.x + s.abs() * h.y + pad, s.abs() * h.x + c.abs() * h.y + pad, h.z + pad);
        Aabb { min: self.pose.position - ext, max: self.pose.position + ext }
    }

    /// Footprint corners in counter-clockwise order.
    pub fn corners_xy(&self, pad: f64) -> [[f64; 2]; 4] {
        let hx = self.half_extents.x + pad;
        let hy = self.half_extents.y + pad;
        let local = [[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]];
        local.map(|[x, y]| {
            let w = self.pose.transform_point(&Vec3::new(x, y, 0.0));
            [w.x, w.y]
        })
    }

    /// True when `p` (world frame) lies inside the footprint grown by `pad`.
    pub fn footprint_contains(&self, x: f64, y: f64, pad: f64) -> bool {
        let local = self.pose.inverse().transform_point(&Vec3::new(x, y, 0.0));
        local.x.abs() <= self.half_extents.x + pad && local.y.abs() <= self.half_extents.y + pad
    }

    pub fn contains_point(&self, p: &Vec3, pad: f64) -> bool {
        let local = self.pose.inverse().transform_point(p);
        (0..3).all(|i| local[i].abs() <= self.half_extents[i] + pad)
    }
}

/// Ordered id pair with the smaller id first.
pub fn pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: BTreeMap<String, BoxObject>,
    /// Ids of fixed objects that act as support surfaces.
    #[serde(default)]
    pub regions: BTreeSet<String>,
    pub bounds: Aabb,
}

impl Scene {
    pub fn new(bounds: Aabb) -> Scene {
        Scene { objects: BTreeMap::new(), regions: BTreeSet::new(), bounds }
    }

    pub fn insert(&mut self, obj: BoxObject) {
        self.objects.insert(obj.id.clone(), obj);
    }

    pub fn add_region(&mut self, obj: BoxObject) {
        self.regions.insert(obj.id.clone());
        self.insert(obj.fixed());
    }

    pub fn get(&self, id: &str) -> Option<&BoxObject> {
        self.objects.get(id)
    }

    pub fn movable(&self) -> impl Iterator<Item = &BoxObject> {
        self.objects.values().filter(|o| !o.fixed)
    }

    /// Checks the documented scene invariants.
    pub fn validate(&self) -> Result<(), String> {
        for (id, o) in &self.objects {
            if id != &o.id {
                return Err(format!("object key `{id}` does not match its id `{}`", o.id));
            }
            if o.half_extents.iter().any(|h| h.is_nan() || *h <= 0.0) {
                return Err(format!("`{id}` has non-positive half extents"));
            }
            if !o.pose.is_finite() {
                return Err(format!("`{id}` has a non-finite pose"));
            }
        }
        for r in &self.regions {
            match self.objects.get(r) {
                Some(o) if o.fixed => {}
                _ => return Err(format!("region `{r}` must be a fixed object")),
            }
        }
        Ok(())
    }

    pub fn translated(&self, d: &Vec3) -> Scene {
        let mut s = self.clone();
        for o in s.objects.values_mut() {
            o.pose.position += d;
        }
        s.bounds = s.bounds.translated(d);
        s
    }
}

/// Candidate index pairs whose margin-grown AABBs overlap, by sweeping along x.
pub fn sweep_and_prune(boxes: &[&BoxObject], margin: f64) -> Vec<(usize, usize)> {
    let aabbs: Vec<Aabb> = boxes.iter().map(|b| b.aabb(margin / 2.0)).collect();
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| aabbs[a].min.x.total_cmp(&aabbs[b].min.x).then(a.cmp(&b)));
    let mut active: Vec<usize> = Vec::new();
    let mut out = Vec::new();
    for &i in &order {
        active.retain(|&j| aabbs[j].max.x >= aabbs[i].min.x);
        for &j in &active {
            if aabbs[i].overlaps(&aabbs[j]) {
                out.push((i.min(j), i.max(j)));
            }
        }
        active.push(i);
    }
    out.sort_unstable();
    out
}

/// Id pairs whose bounding boxes overlap; a superset of colliding pairs.
pub fn broad_phase(scene: &Scene) -> Vec<(String, String)> {
    let boxes: Vec<&BoxObject> = scene.objects.values().collect();
    let mut out: Vec<(String, String)> =
        sweep_and_prune(&boxes, 0.0).into_iter().map(|(i, j)| pair(&boxes[i].id, &boxes[j].id)).collect();
    out.sort();
    out
}

fn project(corners: &[[f64; 2]; 4], axis: [f64; 2]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in corners {
        let d = c[0] * axis[0] + c[1] * axis[1];
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (lo, hi)
}

/// Separating-axis test between two yaw-rotated boxes, each grown by
/// `margin / 2`. Touching faces do not count as intersecting.
pub fn box_box_collide(a: &BoxObject, b: &BoxObject, margin: f64) -> bool {
    let pad = margin / 2.0;
    if a.bottom_z() - pad >= b.top_z() + pad || b.bottom_z() - pad >= a.top_z() + pad {
        return false;
    }
    let ca = a.corners_xy(pad);
    let cb = b.corners_xy(pad);
    for yaw in [a.pose.yaw, b.pose.yaw] {
        let (s, c) = yaw.sin_cos();
        for axis in [[c, s], [-s, c]] {
            let (amin, amax) = project(&ca, axis);
            let (bmin, bmax) = project(&cb, axis);
            if amax <= bmin || bmax <= amin {
                return false;
            }
        }
    }
    true
}

/// Pairs where one object rests on the other: vertical faces within
/// `CONTACT_TOLERANCE` and overlapping footprints.
pub fn resting_contacts(scene: &Scene) -> BTreeSet<(String, String)> {
    let boxes: Vec<&BoxObject> = scene.objects.values().collect();
    let mut out = BTreeSet::new();
    for (i, j) in sweep_and_prune(&boxes, 2.0 * CONTACT_TOLERANCE) {
        if is_resting_on(boxes[i], boxes[j]) || is_resting_on(boxes[j], boxes[i]) {
            out.insert(pair(&boxes[i].id, &boxes[j].id));
        }
    }
    out
}

/// `top` sits on `bottom`: its bottom face is within tolerance of the other's
/// top face and the footprints overlap.
pub fn is_resting_on(top: &BoxObject, bottom: &BoxObject) -> bool {
    if (top.bottom_z() - bottom.top_z()).abs() > CONTACT_TOLERANCE {
        return false;
    }
    let mut a = top.clone();
    let mut b = bottom.clone();
    a.pose.position.z = 0.0;
    b.pose.position.z = 0.0;
    box_box_collide(&a, &b, 0.0)
}

/// Broad then narrow phase over the whole scene, skipping `ignore` pairs.
pub fn scene_in_collision(scene: &Scene, ignore: &BTreeSet<(String, String)>, margin: f64) -> Vec<(String, String)> {
    let boxes: Vec<&BoxObject> = scene.objects.values().collect();
    let mut out: Vec<(String, String)> = sweep_and_prune(&boxes, margin)
        .into_iter()
        .map(|(i, j)| (boxes[i], boxes[j]))
        .filter(|(a, b)| box_box_collide(a, b, margin))
        .map(|(a, b)| pair(&a.id, &b.id))
        .filter(|p| !ignore.contains(p))
        .collect();
    out.sort();
    out
}

/// First scene object hit by any of `probes`, skipping objects for which
/// `skip` returns true. Returns (probe id, scene id).
pub fn first_hit(
    probes: &[BoxObject],
    scene: &Scene,
    margin: f64,
    skip: &dyn Fn(&str, &str) -> bool,
) -> Option<(String, String)> {
    for p in probes {
        let pa = p.aabb(margin / 2.0);
        for o in scene.objects.values() {
            if skip(&p.id, &o.id) || !pa.overlaps(&o.aabb(margin / 2.0)) {
                continue;
            }
            if box_box_collide(p, o, margin) {
                return Some((p.id.clone(), o.id.clone()));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn cube(id: &str, x: f64, y: f64, z: f64, h: f64, yaw: f64) -> BoxObject {
        BoxObject::new(id, Vec3::new(h, h, h), Pose::new(x, y, z, yaw), [200, 0, 0])
    }

    fn random_box(rng: &mut ChaCha8Rng, id: &str, spread: f64) -> BoxObject {
        let h = Vec3::new(rng.random_range(0.01..0.1), rng.random_range(0.01..0.1), rng.random_range(0.01..0.1));
        let pose = Pose::new(
            rng.random_range(-spread..spread),
            rng.random_range(-spread..spread),
            rng.random_range(-spread..spread),
            rng.random_range(-PI..PI),
        );
        BoxObject::new(id, h, pose, [1, 2, 3])
    }

    fn random_scene(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> Scene {
        let mut s = Scene::new(Aabb { min: Vec3::repeat(-1.0), max: Vec3::repeat(1.0) });
        for i in 0..n {
            s.insert(random_box(rng, &format!("o{i:02}"), spread));
        }
        s
    }

    #[test]
    fn angle_normalization() {
        assert!((normalize_angle(-PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-9);
        assert!((normalize_angle(0.5) - 0.5).abs() < 1e-12);
        let p = Pose::new(1.0, 2.0, 3.0, 0.7);
        let q = p.compose(&p.inverse());
        assert!(q.position.norm() < 1e-12 && q.yaw.abs() < 1e-12);
    }

    #[test]
    fn basic_collisions() {
        let a = cube("a", 0.0, 0.0, 0.0, 0.5, 0.0);
        assert!(box_box_collide(&a, &a.clone(), 0.0));
        let b = cube("b", 3.0, 0.0, 0.0, 0.5, 0.0);
        assert!(!box_box_collide(&a, &b, 0.0));
        // Rotated 45 degrees the corner reaches sqrt(2)/2.
        let c = cube("c", 1.2, 0.0, 0.0, 0.5, PI / 4.0);
        assert!(box_box_collide(&a, &c, 0.0));
        let d = cube("d", 1.25, 0.0, 0.0, 0.5, PI / 4.0);
        assert!(!box_box_collide(&a, &d, 0.0));
        // Touching faces only collide once a margin is applied.
        let e = cube("e", 1.0, 0.0, 0.0, 0.5, 0.0);
        assert!(!box_box_collide(&a, &e, 0.0));
        assert!(box_box_collide(&a, &e, 1e-4));
    }

    #[test]
    fn broad_phase_examples() {
        let mut s = Scene::new(Aabb { min: Vec3::repeat(-20.0), max: Vec3::repeat(20.0) });
        s.insert(cube("a", 0.0, 0.0, 0.0, 0.5, 0.0));
        s.insert(cube("b", 10.0, 0.0, 0.0, 0.5, 0.0));
        assert!(broad_phase(&s).is_empty());
        s.insert(cube("c", 0.5, 0.2, 0.0, 0.5, 0.3));
        assert_eq!(broad_phase(&s), vec![pair("a", "c")]);
    }

    #[test]
    fn broad_phase_never_misses() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let s = random_scene(&mut rng, 12, 0.3);
            let got: BTreeSet<_> = broad_phase(&s).into_iter().collect();
            let objs: Vec<&BoxObject> = s.objects.values().collect();
            for i in 0..objs.len() {
                for j in i + 1..objs.len() {
                    if objs[i].aabb(0.0).overlaps(&objs[j].aabb(0.0)) {
                        assert!(got.contains(&pair(&objs[i].id, &objs[j].id)));
                    }
                }
            }
        }
    }

    /// Dense grid sampling of the overlap of the two bounding boxes.
    /// Returns whether any sample lies in both boxes grown by `pad`, and the
    /// grid spacing used.
    fn sampled_overlap(a: &BoxObject, b: &BoxObject, pad: f64) -> (bool, f64) {
        let ra = a.aabb(pad);
        let rb = b.aabb(pad);
        let lo = ra.min.sup(&rb.min);
        let hi = ra.max.inf(&rb.max);
        if (0..3).any(|i| lo[i] >= hi[i]) {
            return (false, 0.0);
        }
        let n = 48;
        let step = (hi - lo) / n as f64;
        let spacing = step.max();
        for i in 0..=n {
            for j in 0..=n {
                for k in 0..=n {
                    let p = lo + Vec3::new(step.x * i as f64, step.y * j as f64, step.z * k as f64);
                    if a.contains_point(&p, pad) && b.contains_point(&p, pad) {
                        return (true, spacing);
                    }
                }
            }
        }
        (false, spacing)
    }

    #[test]
    fn narrow_phase_matches_point_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tol = 1e-3;
        let mut certain = 0;
        for _ in 0..1000 {
            let a = random_box(&mut rng, "a", 0.12);
            let b = random_box(&mut rng, "b", 0.12);
            let margin = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..0.01) };
            let got = box_box_collide(&a, &b, margin);
            let (deep, _) = sampled_overlap(&a, &b, margin / 2.0 - tol);
            let (loose, spacing) = sampled_overlap(&a, &b, margin / 2.0 + tol);
            if deep {
                assert!(got, "missed a certain collision");
                certain += 1;
            } else if !loose && spacing <= tol {
                assert!(!got, "reported a certainly free pair");
                certain += 1;
            } else if !loose && spacing == 0.0 {
                assert!(!got);
                certain += 1;
            }
        }
        assert!(certain > 700, "only {certain} certain cases");
    }

    #[test]
    fn resting_stack_is_ignored_and_penetration_is_reported() {
        let mut s = Scene::new(Aabb { min: Vec3::repeat(-1.0), max: Vec3::repeat(1.0) });
        s.add_region(BoxObject::new("table", Vec3::new(0.3, 0.3, 0.01), Pose::new(0.0, 0.0, -0.01, 0.0), [150; 3]));
        s.insert(cube("a", 0.0, 0.0, 0.02, 0.02, 0.0));
        s.insert(cube("b", 0.005, 0.0, 0.0595, 0.02, 0.2));
        let ignore = resting_contacts(&s);
        assert_eq!(ignore.len(), 2);
        assert!(scene_in_collision(&s, &ignore, 0.0).is_empty());
        assert_eq!(scene_in_collision(&s, &BTreeSet::new(), 0.0), vec![pair("a", "b")]);

        s.add_region(BoxObject::new("stove", Vec3::new(0.06, 0.06, 0.005), Pose::new(0.2, 0.0, 0.005, 0.0), [0, 0, 200]));
        s.insert(cube("c", 0.2, 0.0, 0.025 - 0.01 + 0.0, 0.02, 0.0));
        let ignore = resting_contacts(&s);
        assert!(scene_in_collision(&s, &ignore, 0.0).contains(&pair("c", "stove")));
    }

    #[test]
    fn scene_collision_matches_all_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let s = random_scene(&mut rng, 10, 0.25);
            let margin = rng.random_range(0.0..0.01);
            let got = scene_in_collision(&s, &BTreeSet::new(), margin);
            let objs: Vec<&BoxObject> = s.objects.values().collect();
            let mut want = Vec::new();
            for i in 0..objs.len() {
                for j in i + 1..objs.len() {
                    if box_box_collide(objs[i], objs[j], margin) {
                        want.push(pair(&objs[i].id, &objs[j].id));
                    }
                }
            }
            want.sort();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn scene_round_trips_through_json() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = random_scene(&mut rng, 3, 0.2);
        s.add_region(BoxObject::new("table", Vec3::new(0.3, 0.3, 0.01), Pose::new(0.0, 0.0, -0.01, 0.0), [150; 3]));
        let text = serde_json::to_string(&s).unwrap();
        let back: Scene = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        assert!(back.validate().is_ok());
    }

    fn arb_box(id: &'static str) -> impl Strategy<Value = BoxObject> {
        (0.01f64..0.1, 0.01f64..0.1, 0.01f64..0.1, -0.15f64..0.15, -0.15f64..0.15, -0.1f64..0.1, -PI..PI)
            .prop_map(move |(hx, hy, hz, x, y, z, yaw)| BoxObject::new(id, Vec3::new(hx, hy, hz), Pose::new(x, y, z, yaw), [0; 3]))
    }

    proptest! {
        #[test]
        fn symmetric(a in arb_box("a"), b in arb_box("b"), m in 0.0f64..0.02) {
            prop_assert_eq!(box_box_collide(&a, &b, m), box_box_collide(&b, &a, m));
        }

        #[test]
        fn monotone_in_margin(a in arb_box("a"), b in arb_box("b"), m in 0.0f64..0.02, extra in 0.0f64..0.02) {
            if box_box_collide(&a, &b, m) {
                prop_assert!(box_box_collide(&a, &b, m + extra));
            }
        }

        #[test]
        fn translation_invariant(a in arb_box("a"), b in arb_box("b"), d in proptest::array::uniform3(-5.0f64..5.0)) {
            let d = Vec3::new(d[0], d[1], d[2]);
            let mut s = Scene::new(Aabb { min: Vec3::repeat(-1.0), max: Vec3::repeat(1.0) });
            s.insert(a);
            s.insert(b);
            let t = s.translated(&d);
            prop_assert_eq!(scene_in_collision(&s, &BTreeSet::new(), 0.001), scene_in_collision(&t, &BTreeSet::new(), 0.001));
        }
    }
}
