//! Problem generators and the experiment runner.

mod suite;

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use suite::{format_summary, run_instance, run_suite, summarize, write_runs, write_timings, AdvisorSpec, RunRecord, SuiteConfig, SummaryRow};

use crate::domains;
use crate::geom::{Aabb, BoxObject, Pose, Scene, Vec3};
use crate::pddl::{parse_problem, ProblemDef};
use crate::sim::TABLE;

pub const BLOCK_HALF: f64 = 0.02;
pub const TABLE_HALF: [f64; 3] = [0.3, 0.3, 0.1];
pub const TABLE_TOP: f64 = 0.2;
pub const REGION_HALF: f64 = 0.06;
pub const DISTRACTORS: usize = 12;
pub const FOODS: [&str; 6] = ["radish", "egg", "bacon", "chicken", "celery", "apple"];
const FOOD_COLORS: [[u8; 3]; 6] = [[200, 40, 90], [245, 240, 220], [190, 90, 70], [230, 200, 150], [120, 200, 80], [210, 30, 30]];
const BLOCK_NAMES: [&str; 8] = ["a", "b", "c", "d", "e", "f", "g", "h"];
const BLOCK_COLORS: [[u8; 3]; 8] =
    [[200, 50, 50], [50, 160, 60], [50, 90, 200], [220, 180, 40], [160, 60, 180], [40, 170, 170], [230, 120, 40], [120, 80, 40]];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Blocksworld,
    Kitchen,
}

impl DomainKind {
    pub fn name(self) -> &'static str {
        match self {
            DomainKind::Blocksworld => "blocksworld",
            DomainKind::Kitchen => "kitchen",
        }
    }

    pub fn domain_text(self) -> &'static str {
        match self {
            DomainKind::Blocksworld => domains::BLOCKSWORLD,
            DomainKind::Kitchen => domains::KITCHEN,
        }
    }

    /// Object counts the generator accepts.
    pub fn n_range(self) -> std::ops::RangeInclusive<usize> {
        match self {
            DomainKind::Blocksworld => 2..=8,
            DomainKind::Kitchen => 1..=6,
        }
    }
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DomainKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "blocksworld" => Ok(DomainKind::Blocksworld),
            "kitchen" => Ok(DomainKind::Kitchen),
            _ => Err(format!("unknown domain `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub domain: DomainKind,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub spec: InstanceSpec,
    pub problem_text: String,
    pub problem: ProblemDef,
    pub scene: Scene,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{domain} needs n in {lo}..={hi}, got {n}")]
pub struct BadSize {
    pub domain: DomainKind,
    pub n: usize,
    pub lo: usize,
    pub hi: usize,
}

/// Empty workspace with the 60 x 60 cm table.
pub fn table_scene() -> Scene {
    let mut s = Scene::new(Aabb { min: Vec3::new(-1.0, -1.0, 0.0), max: Vec3::new(1.0, 1.0, 1.5) });
    let [hx, hy, hz] = TABLE_HALF;
    s.add_region(BoxObject::new(TABLE, Vec3::new(hx, hy, hz), Pose::new(0.0, 0.0, hz, 0.0), [150, 110, 70]));
    s
}

fn cube(id: &str, x: f64, y: f64, z: f64, yaw: f64, color: [u8; 3]) -> BoxObject {
    BoxObject::new(id, Vec3::new(BLOCK_HALF, BLOCK_HALF, BLOCK_HALF), Pose::new(x, y, z, yaw), color)
}

fn check_size(domain: DomainKind, n: usize) -> Result<(), BadSize> {
    let r = domain.n_range();
    if r.contains(&n) {
        Ok(())
    } else {
        Err(BadSize { domain, n, lo: *r.start(), hi: *r.end() })
    }
}

/// `n` blocks split at random into two or three stacks; the goal is a single
/// tower in a random order, which no initial arrangement matches.
pub fn gen_blocksworld(n: usize, seed: u64) -> Result<Instance, BadSize> {
    check_size(DomainKind::Blocksworld, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names: Vec<&str> = BLOCK_NAMES[..n].to_vec();
    names.shuffle(&mut rng);
    let stacks = rng.random_range(2..=n.min(3));
    // Cut points give every stack at least one block.
    let mut cuts: Vec<usize> = (1..n).collect();
    cuts.shuffle(&mut rng);
    let mut cuts: Vec<usize> = cuts[..stacks - 1].to_vec();
    cuts.sort_unstable();
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(n);

    let mut scene = table_scene();
    let mut init = vec!["(arm-empty)".to_string()];
    let xs = [-0.15, 0.0, 0.15];
    for (s, w) in bounds.windows(2).enumerate() {
        let stack = &names[w[0]..w[1]];
        let x = xs[s] + rng.random_range(-0.02..0.02);
        let y = 0.08 + rng.random_range(-0.02..0.02);
        let yaw = rng.random_range(-0.4..0.4);
        for (level, b) in stack.iter().enumerate() {
            let color = BLOCK_COLORS[BLOCK_NAMES.iter().position(|x| x == b).unwrap_or(0)];
            let z = TABLE_TOP + BLOCK_HALF * (2 * level + 1) as f64;
            scene.insert(cube(b, x, y, z, yaw, color));
            if level == 0 {
                init.push(format!("(on-table {b})"));
            } else {
                init.push(format!("(on {b} {})", stack[level - 1]));
            }
        }
        init.push(format!("(clear {})", stack[stack.len() - 1]));
    }

    let mut tower: Vec<&str> = BLOCK_NAMES[..n].to_vec();
    tower.shuffle(&mut rng);
    let mut goal = vec![format!("(on-table {})", tower[0])];
    goal.extend(tower.windows(2).map(|w| format!("(on {} {})", w[1], w[0])));

    let text = format!(
        "(define (problem blocksworld-n{n}-s{seed})\n  (:domain blocksworld)\n  (:objects {} - block)\n  (:init {})\n  (:goal (and {})))\n",
        BLOCK_NAMES[..n].join(" "),
        init.join(" "),
        goal.join(" ")
    );
    let problem = parse_problem(&text, &domains::blocksworld()).expect("generated blocksworld problem parses");
    Ok(Instance { spec: InstanceSpec { domain: DomainKind::Blocksworld, n, seed }, problem_text: text, problem, scene })
}

/// Centres of the six food items.
pub const FOOD_SLOTS: [(f64, f64); 6] = [(-0.14, 0.08), (0.0, 0.08), (0.14, 0.08), (-0.14, 0.2), (0.0, 0.2), (0.14, 0.2)];
pub const SINK_AT: (f64, f64) = (-0.17, -0.08);
pub const STOVE_AT: (f64, f64) = (0.17, -0.08);

/// Six foods on the table among twelve fixed distractors, with a sink and a
/// stove; the goal is `n` randomly chosen foods cooked.
pub fn gen_kitchen(n: usize, seed: u64) -> Result<Instance, BadSize> {
    check_size(DomainKind::Kitchen, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = table_scene();
    let slab = Vec3::new(REGION_HALF, REGION_HALF, 0.005);
    scene.add_region(BoxObject::new("sink", slab, Pose::new(SINK_AT.0, SINK_AT.1, TABLE_TOP + slab.z, 0.0), [200, 30, 30]));
    scene.add_region(BoxObject::new("stove", slab, Pose::new(STOVE_AT.0, STOVE_AT.1, TABLE_TOP + slab.z, 0.0), [30, 60, 200]));
    for (i, ((x, y), name)) in FOOD_SLOTS.iter().zip(FOODS).enumerate() {
        let jx = rng.random_range(-0.005..0.005);
        let jy = rng.random_range(-0.005..0.005);
        let yaw = rng.random_range(-0.2..0.2);
        scene.insert(cube(name, x + jx, y + jy, TABLE_TOP + BLOCK_HALF, yaw, FOOD_COLORS[i]));
    }
    let d = Vec3::new(0.012, 0.012, 0.03);
    let mut k = 0;
    for y in [0.02, 0.14, 0.26] {
        for x in [-0.21, -0.07, 0.07, 0.21] {
            scene.insert(BoxObject::new(&format!("distractor{k}"), d, Pose::new(x, y, TABLE_TOP + d.z, 0.0), [128, 128, 128]).fixed());
            k += 1;
        }
    }
    let mut chosen: Vec<&str> = FOODS.to_vec();
    chosen.shuffle(&mut rng);
    let mut chosen = chosen[..n].to_vec();
    chosen.sort_by_key(|f| FOODS.iter().position(|x| x == f));

    let init: Vec<String> = std::iter::once("(arm-empty)".to_string()).chain(FOODS.iter().map(|f| format!("(on {f} {TABLE})"))).collect();
    let goal: Vec<String> = chosen.iter().map(|f| format!("(cooked {f})")).collect();
    let text = format!(
        "(define (problem kitchen-n{n}-s{seed})\n  (:domain kitchen)\n  (:objects {} - food sink - sink stove - stove {TABLE} - region)\n  (:init {})\n  (:goal (and {})))\n",
        FOODS.join(" "),
        init.join(" "),
        goal.join(" ")
    );
    let problem = parse_problem(&text, &domains::kitchen()).expect("generated kitchen problem parses");
    Ok(Instance { spec: InstanceSpec { domain: DomainKind::Kitchen, n, seed }, problem_text: text, problem, scene })
}

pub fn generate(spec: InstanceSpec) -> Result<Instance, BadSize> {
    match spec.domain {
        DomainKind::Blocksworld => gen_blocksworld(spec.n, spec.seed),
        DomainKind::Kitchen => gen_kitchen(spec.n, spec.seed),
    }
}
