//! The hybrid state tree and the planning loop.
//!
//! Each tree node pairs a symbolic state with a world consistent with it.
//! Expanding a node refines and simulates every admissible action of the
//! discrete state graph; the advisor picks one feasible successor and the
//! others stay in the tree as open siblings. A node that fails its retries
//! is exhausted and the advisor names a node to resume from.

mod refine;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use refine::{
    goal_holds, home_config, init_root, Failure, Fault, FaultInjector, FaultSite, Faults, PlannerConfig, Refiner, Stage,
    DROP_GAP, GRASP_STANDOFF, INIT_SAMPLES, REACH_BAND,
};

use crate::advisor::{heuristic_select_backtrack, heuristic_select_successor, Advisor, AdvisorQuery, Candidate, Feedback, LabeledImage, QueryKind};
use crate::dgraph::{build_graph, DiscreteStateGraph, GraphError};
use crate::geom::{Pose, Scene};
use crate::pddl::{apply, emit_problem, parse_domain, parse_problem, DomainDef, GroundAction, PddlError, ProblemDef, SymbolicState};
use crate::render::render_all;
use crate::robot::{Config, RobotModel};
use crate::sim::{consistent, evaluate_predicates, ActionBinding, Detail, SceneFile, Simulator, ViolationKind, WorldState};
use crate::topk::{solve_topk_until, TopKError};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Pddl(#[from] PddlError),
    #[error(transparent)]
    TopK(#[from] TopKError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("initial state unsatisfiable: {0}")]
    Unsatisfiable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeStatus {
    Open,
    Expanded,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridNode {
    pub id: usize,
    pub symbolic: SymbolicState,
    pub world: WorldState,
    pub parent: Option<usize>,
    pub incoming: Option<ActionBinding>,
    pub depth: usize,
    pub retry_count: usize,
    pub status: NodeStatus,
    /// Labels of actions whose child was exhausted; skipped on re-expansion
    /// while other actions remain.
    pub blocked: BTreeSet<String>,
}

/// A refinement that did not produce a child.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedEdge {
    pub src: usize,
    pub action: String,
    pub ee_goal: Option<Pose>,
    pub violation: ViolationKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridTree {
    pub nodes: Vec<HybridNode>,
    pub root: usize,
    pub config: PlannerConfig,
    /// Failures of the latest expansion of each node.
    pub failures: Vec<FailedEdge>,
}

impl HybridTree {
    pub fn children(&self, id: usize) -> impl Iterator<Item = &HybridNode> {
        self.nodes.iter().filter(move |n| n.parent == Some(id))
    }

    /// Ancestors of `id`, nearest first.
    pub fn ancestors(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = self.nodes[id].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.nodes[p].parent;
        }
        out
    }

    /// Single root, parents created before children, depths consistent.
    pub fn well_formed(&self) -> bool {
        self.nodes.iter().enumerate().all(|(i, n)| {
            n.id == i
                && match n.parent {
                    None => i == self.root && n.depth == 0,
                    Some(p) => p < i && self.nodes[p].depth + 1 == n.depth,
                }
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&TreeJson::of(self)).expect("tree json")
    }
}

#[derive(Serialize)]
struct TreeJson {
    root: usize,
    nodes: Vec<NodeJson>,
    edges: Vec<EdgeJson>,
}

#[derive(Serialize)]
struct NodeJson {
    id: usize,
    parent: Option<usize>,
    status: NodeStatus,
    depth: usize,
    symbolic: Vec<String>,
    objects: std::collections::BTreeMap<String, Pose>,
    robot_config: Config,
    held: Option<String>,
}

#[derive(Serialize)]
struct EdgeJson {
    src: usize,
    dst: Option<usize>,
    action: String,
    feasible: bool,
    ee_goal: Option<Pose>,
    #[serde(skip_serializing_if = "Option::is_none")]
    violation: Option<ViolationKind>,
}

impl TreeJson {
    fn of(tree: &HybridTree) -> TreeJson {
        let nodes = tree
            .nodes
            .iter()
            .map(|n| NodeJson {
                id: n.id,
                parent: n.parent,
                status: n.status,
                depth: n.depth,
                symbolic: n.symbolic.iter().map(|a| a.to_string()).collect(),
                objects: n.world.scene.movable().map(|o| (o.id.clone(), o.pose)).collect(),
                robot_config: n.world.robot_config,
                held: n.world.held().map(str::to_string),
            })
            .collect();
        let mut edges: Vec<EdgeJson> = tree
            .nodes
            .iter()
            .filter_map(|n| {
                let (p, b) = (n.parent?, n.incoming.as_ref()?);
                Some(EdgeJson { src: p, dst: Some(n.id), action: b.action.label(), feasible: true, ee_goal: Some(b.ee_goal), violation: None })
            })
            .collect();
        edges.extend(tree.failures.iter().map(|f| EdgeJson {
            src: f.src,
            dst: None,
            action: f.action.clone(),
            feasible: false,
            ee_goal: f.ee_goal,
            violation: Some(f.violation.clone()),
        }));
        TreeJson { root: tree.root, nodes, edges }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expansion {
    Child(usize),
    /// One entry per attempted action.
    AllFailed(Vec<Feedback>),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub expansions: usize,
    pub backtracks: usize,
    pub retries: usize,
    /// Advisor replies replaced by a fallback choice.
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub action: String,
    pub binding: ActionBinding,
}

/// Everything needed to re-execute a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub domain: String,
    pub problem: String,
    pub robot: RobotModel,
    pub root: WorldState,
    pub steps: Vec<PlanRecord>,
}

impl PlanFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan file json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub success: bool,
    /// Why the search stopped without a plan.
    pub reason: Option<String>,
    pub steps: Vec<PlanRecord>,
    /// Seconds.
    pub planning_time: f64,
    pub stats: Stats,
    pub tree_size: usize,
    pub root_world: WorldState,
    pub final_world: WorldState,
}

fn stream(seed: u64, key: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key);
    rng
}

const ROOT_STREAM: u64 = u64::MAX;

/// One planning run over a fixed problem.
pub struct Search<'a> {
    pub domain: &'a DomainDef,
    pub problem: &'a ProblemDef,
    pub robot: &'a RobotModel,
    pub config: PlannerConfig,
    pub graph: DiscreteStateGraph,
    pub tree: HybridTree,
    pub stats: Stats,
    pub faults: Option<&'a dyn FaultInjector>,
    /// Rendered views are written here when set.
    pub run_dir: Option<PathBuf>,
    description: String,
    started: Instant,
}

impl<'a> Search<'a> {
    /// Solves the symbolic problem, builds the discrete state graph and
    /// samples the root world.
    pub fn new(domain: &'a DomainDef, problem: &'a ProblemDef, robot: &'a RobotModel, scene: &Scene, config: PlannerConfig) -> Result<Search<'a>, PlanError> {
        let started = Instant::now();
        let deadline = started.checked_add(std::time::Duration::from_secs_f64(config.timeout.clamp(0.0, 1e9)));
        let plans = solve_topk_until(domain, problem, config.k, config.node_budget, deadline)?;
        let graph = build_graph(&plans, &problem.init)?;
        let world = init_root(domain, problem, scene, robot, &mut stream(config.seed, ROOT_STREAM))?;
        debug_assert!(consistent(&world, &problem.init, domain));
        let root = HybridNode {
            id: 0,
            symbolic: problem.init.clone(),
            world,
            parent: None,
            incoming: None,
            depth: 0,
            retry_count: 0,
            status: NodeStatus::Open,
            blocked: BTreeSet::new(),
        };
        let description = format!("Domain:\n{}\nProblem:\n{}", crate::pddl::emit_domain(domain), emit_problem(problem));
        Ok(Search {
            domain,
            problem,
            robot,
            tree: HybridTree { nodes: vec![root], root: 0, config: config.clone(), failures: Vec::new() },
            config,
            graph,
            stats: Stats::default(),
            faults: None,
            run_dir: None,
            description,
            started,
        })
    }

    pub fn elapsed(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    fn timed_out(&self) -> bool {
        self.elapsed() > self.config.timeout
    }

    pub fn is_goal(&self, id: usize) -> bool {
        let n = &self.tree.nodes[id];
        self.problem.goal_satisfied_by(&n.symbolic) && goal_holds(&n.world, &self.problem.goal, self.domain)
    }

    fn goal_description(&self) -> String {
        self.problem.goal.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(" ")
    }

    fn refiner(&self) -> Refiner<'_> {
        Refiner { robot: self.robot, domain: self.domain, config: &self.config }
    }

    /// Refines and simulates one action from `node`.
    fn try_action(&self, node: &HybridNode, action: &GroundAction, key: u64, site: FaultSite) -> Result<(ActionBinding, WorldState, usize), Failure> {
        let mut rng = stream(self.config.seed, key);
        let binding = self.refiner().refine_action(action, &node.world, &mut rng, site)?;
        let fail = |violation| Failure { ee_goal: Some(binding.ee_goal), violation };
        site.check(Stage::Execution, action).map_err(fail)?;
        let sim = Simulator { robot: self.robot, domain: self.domain };
        let out = sim.execute(&node.world, &binding);
        if let Some(v) = out.violations.into_iter().next() {
            return Err(fail(v));
        }
        let expected = apply(&node.symbolic, action).map_err(|e| fail(ViolationKind::new(crate::sim::Category::ExecutionInconsistency, Some(Detail::Unsupported), e.to_string())))?;
        if !consistent(&out.next, &expected, self.domain) {
            return Err(fail(ViolationKind::new(
                crate::sim::Category::ExecutionInconsistency,
                Some(Detail::Unsupported),
                format!("world after {} is inconsistent with the symbolic successor", action.label()),
            )));
        }
        let moved = out
            .displacement_report
            .iter()
            .filter(|(id, d)| **d > 0.0 && Some(id.as_str()) != action.args.first().map(String::as_str))
            .count();
        Ok((binding, out.next, moved))
    }

    fn render_node(&self, id: usize, label: &str, images: &mut Vec<LabeledImage>) {
        for (view, img) in render_all(&self.tree.nodes[id].world, Some(self.robot)) {
            let png = img.to_png();
            if let Some(dir) = &self.run_dir {
                let path = dir.join(format!("{id}_{}.png", view.name()));
                if let Err(e) = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&path, &png)) {
                    log::warn!("cannot write {}: {e}", path.display());
                }
            }
            images.push(LabeledImage { label: format!("{label}, {} view", view.name()), png });
        }
    }

    /// Refines every admissible action at `id`, adds the feasible successors
    /// as open children and lets the advisor pick one of them.
    pub fn expand(&mut self, id: usize, advisor: &mut dyn Advisor) -> Expansion {
        self.stats.expansions += 1;
        let node = &self.tree.nodes[id];
        let Ok(mut actions) = self.graph.admissible_actions(&node.symbolic) else {
            return Expansion::AllFailed(Vec::new());
        };
        let unblocked: Vec<GroundAction> = actions.iter().filter(|a| !node.blocked.contains(&a.label())).cloned().collect();
        if !unblocked.is_empty() {
            actions = unblocked;
        }
        let attempt = node.retry_count;
        let site = FaultSite { faults: self.faults, node: id, attempt };
        let results: Vec<_> = actions
            .par_iter()
            .enumerate()
            .map(|(i, a)| self.try_action(node, a, ((id as u64) << 32) | ((attempt as u64) << 16) | i as u64, site))
            .collect();

        self.tree.failures.retain(|f| f.src != id);
        let mut feedback = Vec::new();
        let mut successes = Vec::new();
        for (a, r) in actions.iter().zip(results) {
            match r {
                Ok(s) => successes.push((a.clone(), s)),
                Err(f) => {
                    feedback.push(Feedback { action: a.label(), violation: f.violation.clone() });
                    self.tree.failures.push(FailedEdge { src: id, action: a.label(), ee_goal: f.ee_goal, violation: f.violation });
                }
            }
        }
        if successes.is_empty() {
            return Expansion::AllFailed(feedback);
        }

        let parent = &self.tree.nodes[id];
        let (depth, parent_symbolic) = (parent.depth + 1, parent.symbolic.clone());
        let mut candidates = Vec::new();
        let mut ids = Vec::new();
        for (i, (action, (binding, world, moved))) in successes.into_iter().enumerate() {
            let symbolic = apply(&parent_symbolic, &action).expect("admissible actions are applicable");
            debug_assert!(consistent(&world, &symbolic, self.domain));
            let distance = self.graph.distance_to_goal(&symbolic).ok().flatten();
            let child = self.tree.nodes.len();
            candidates.push(Candidate { index: i, action: action.label(), distance_to_goal: distance, displaced: moved });
            ids.push(child);
            self.tree.nodes.push(HybridNode {
                id: child,
                symbolic,
                world,
                parent: Some(id),
                incoming: Some(binding),
                depth,
                retry_count: 0,
                status: NodeStatus::Open,
                blocked: BTreeSet::new(),
            });
        }
        self.tree.nodes[id].status = NodeStatus::Expanded;

        let choice = if candidates.len() == 1 {
            0
        } else {
            let mut images = Vec::new();
            if advisor.wants_images() {
                self.render_node(id, &format!("current node {id}"), &mut images);
                for (c, &nid) in candidates.iter().zip(&ids) {
                    self.render_node(nid, &format!("candidate {} ({})", c.index, c.action), &mut images);
                }
            }
            let query = AdvisorQuery {
                kind: QueryKind::SelectSuccessor,
                description: self.description.clone(),
                goal_description: self.goal_description(),
                current_node: id,
                images,
                candidates,
                tree_json: None,
                feedback: Vec::new(),
                options: Vec::new(),
            };
            match advisor.advise(&query) {
                Ok(r) if r.choice < ids.len() => r.choice,
                Ok(r) => {
                    log::warn!("advisor chose missing candidate {}; using the heuristic", r.choice);
                    self.stats.fallbacks += 1;
                    heuristic_select_successor(&query).choice
                }
                Err(e) => {
                    log::warn!("advisor failed: {e}; using the heuristic");
                    self.stats.fallbacks += 1;
                    heuristic_select_successor(&query).choice
                }
            }
        };
        Expansion::Child(ids[choice])
    }

    /// Retries `id` up to the configured number of times; then marks it
    /// exhausted and asks the advisor where to resume. `None` means no node
    /// is left to try or time ran out.
    pub fn replan(&mut self, id: usize, advisor: &mut dyn Advisor, mut feedback: Vec<Feedback>) -> Option<usize> {
        while self.tree.nodes[id].retry_count < self.config.retries {
            if self.timed_out() {
                return None;
            }
            self.tree.nodes[id].retry_count += 1;
            self.stats.retries += 1;
            match self.expand(id, advisor) {
                Expansion::Child(c) => return Some(c),
                Expansion::AllFailed(f) => feedback = f,
            }
        }
        self.tree.nodes[id].status = NodeStatus::Exhausted;
        if let (Some(p), Some(b)) = (self.tree.nodes[id].parent, &self.tree.nodes[id].incoming) {
            let label = b.action.label();
            self.tree.nodes[p].blocked.insert(label);
        }
        let options: Vec<usize> = self.tree.nodes.iter().filter(|n| n.status != NodeStatus::Exhausted).map(|n| n.id).collect();
        if options.is_empty() {
            return None;
        }
        self.stats.backtracks += 1;
        let mut images = Vec::new();
        if advisor.wants_images() {
            self.render_node(id, &format!("failed node {id}"), &mut images);
        }
        let query = AdvisorQuery {
            kind: QueryKind::SelectBacktrack,
            description: self.description.clone(),
            goal_description: self.goal_description(),
            current_node: id,
            images,
            candidates: Vec::new(),
            tree_json: Some(self.tree.to_json()),
            feedback,
            options: options.clone(),
        };
        let deepest_open_ancestor = || self.tree.ancestors(id).into_iter().find(|a| options.contains(a));
        let heuristic = || heuristic_select_backtrack(&query).ok().map(|r| r.choice).filter(|c| options.contains(c));
        match advisor.advise(&query) {
            Ok(r) if options.contains(&r.choice) => Some(r.choice),
            Ok(r) => {
                log::warn!("advisor chose unavailable node {}; resuming at the deepest open ancestor", r.choice);
                self.stats.fallbacks += 1;
                deepest_open_ancestor().or_else(heuristic)
            }
            Err(e) => {
                log::warn!("advisor failed: {e}; using the heuristic");
                self.stats.fallbacks += 1;
                heuristic().or_else(deepest_open_ancestor)
            }
        }
    }

    /// Bindings from the root to `id`.
    pub fn path_to(&self, id: usize) -> Vec<PlanRecord> {
        let mut ids = self.tree.ancestors(id);
        ids.reverse();
        ids.push(id);
        ids.iter()
            .filter_map(|&n| self.tree.nodes[n].incoming.clone())
            .map(|b| PlanRecord { action: b.action.label(), binding: b })
            .collect()
    }

    /// Expands and replans from the root until a goal node is reached, no
    /// node is left, or the timeout passes.
    pub fn run(&mut self, advisor: &mut dyn Advisor) -> PlanResult {
        self.run_from(self.tree.root, advisor)
    }

    pub fn run_from(&mut self, start: usize, advisor: &mut dyn Advisor) -> PlanResult {
        let mut current = start;
        let reason = loop {
            if self.is_goal(current) {
                break None;
            }
            if self.timed_out() {
                break Some("timeout".to_string());
            }
            let next = match self.expand(current, advisor) {
                Expansion::Child(c) => Some(c),
                Expansion::AllFailed(feedback) => self.replan(current, advisor, feedback),
            };
            match next {
                Some(n) => current = n,
                None if self.timed_out() => break Some("timeout".to_string()),
                None => break Some("every node of the search tree is exhausted".to_string()),
            }
        };
        let success = reason.is_none();
        PlanResult {
            success,
            reason,
            steps: if success { self.path_to(current) } else { Vec::new() },
            planning_time: self.elapsed(),
            stats: self.stats.clone(),
            tree_size: self.tree.nodes.len(),
            root_world: self.tree.nodes[self.tree.root].world.clone(),
            final_world: self.tree.nodes[current].world.clone(),
        }
    }

    pub fn plan_file(&self, result: &PlanResult) -> PlanFile {
        PlanFile {
            domain: crate::pddl::emit_domain(self.domain),
            problem: emit_problem(self.problem),
            robot: self.robot.clone(),
            root: result.root_world.clone(),
            steps: result.steps.clone(),
        }
    }
}

/// Parses the inputs and runs one search.
pub fn plan(domain_text: &str, problem_text: &str, scene: &SceneFile, config: PlannerConfig, advisor: &mut dyn Advisor) -> Result<(PlanResult, PlanFile), PlanError> {
    let domain = parse_domain(domain_text)?;
    let problem = parse_problem(problem_text, &domain)?;
    let mut search = Search::new(&domain, &problem, &scene.robot, &scene.scene, config)?;
    let result = search.run(advisor);
    let file = search.plan_file(&result);
    Ok((result, file))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub executed: usize,
    /// Step index and the violations it raised.
    pub violations: Vec<(usize, ViolationKind)>,
    pub goal_satisfied: bool,
    pub final_world: WorldState,
}

impl ReplayReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty() && self.goal_satisfied
    }
}

/// Executes the stored bindings from the stored root world and checks the
/// goal against the resulting world.
pub fn replay(file: &PlanFile) -> Result<ReplayReport, PlanError> {
    let domain = parse_domain(&file.domain)?;
    let problem = parse_problem(&file.problem, &domain)?;
    let sim = Simulator { robot: &file.robot, domain: &domain };
    let mut world = file.root.clone();
    let mut violations = Vec::new();
    for (i, step) in file.steps.iter().enumerate() {
        let out = sim.execute(&world, &step.binding);
        violations.extend(out.violations.into_iter().map(|v| (i, v)));
        world = out.next;
    }
    let goal_satisfied = goal_holds(&world, &problem.goal, &domain) && problem.goal_satisfied_by(&evaluate_predicates(&world, &domain));
    Ok(ReplayReport { executed: file.steps.len(), violations, goal_satisfied, final_world: world })
}
