//! Top-k symbolic planning under unit action costs.
//!
//! A plan is a simple path in the state space: it never revisits a state and
//! stops at the first goal state it reaches. `solve_topk` returns the k
//! smallest plans in (cost, lexicographic action sequence) order.
//!
//! For a cost bound `C`, a breadth-first sweep keeps every state whose
//! distance from the initial state plus its LM-cut value is at most `C`;
//! since LM-cut is admissible this retains every state of every plan of cost
//! `<= C`. A backward sweep gives each kept state its exact distance to a goal
//! inside that subgraph, and a depth-first walk in action order then lists the
//! plans of cost exactly `C` lexicographically. `C` starts at the LM-cut value
//! of the initial state and grows until k plans are known.

mod heuristic;
mod task;

use std::collections::{HashMap, VecDeque};
use std::fmt::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use heuristic::{goal_count, heuristic, Heuristic};
use heuristic::Relaxed;
use task::{Bits, Task};

use crate::pddl::{ground, simulate_plan, DomainDef, GroundAction, ProblemDef};

pub const DEFAULT_NODE_BUDGET: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub actions: Vec<GroundAction>,
    pub cost: u32,
}

impl Plan {
    pub fn labels(&self) -> Vec<String> {
        self.actions.iter().map(GroundAction::label).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopKResult {
    pub plans: Vec<Plan>,
    pub requested_k: usize,
    /// The node budget ran out before k plans were confirmed.
    pub partial: bool,
    /// Every reachable state was explored, so no further plans exist.
    pub exhausted: bool,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopKError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("the goal is unreachable from the initial state")]
    Unsolvable,
    #[error("node budget of {0} exhausted before any plan was found")]
    BudgetExhausted(usize),
    #[error("deadline passed before any plan was found")]
    DeadlinePassed,
    #[error("internal error: produced plan fails validation: {0}")]
    InvalidPlan(String),
}

struct Budget {
    used: usize,
    limit: usize,
    deadline: Option<Instant>,
}

impl Budget {
    fn spend(&mut self) -> bool {
        self.used += 1;
        if self.used.is_multiple_of(1024) && self.deadline.is_some_and(|d| Instant::now() > d) {
            self.limit = self.used - 1;
        }
        self.used <= self.limit
    }
}

struct Explored {
    states: Vec<Bits>,
    goal: Vec<bool>,
    edges: Vec<Vec<(u32, u32)>>,
    dist: Vec<u32>,
    /// Some state was dropped by the cost bound (not merely a dead end).
    bounded: bool,
}

struct Search<'a> {
    task: &'a Task,
    relaxed: Relaxed,
    h_cache: HashMap<Bits, Option<u32>>,
    budget: Budget,
}

impl Search<'_> {
    fn h(&mut self, s: &Bits) -> Option<u32> {
        if let Some(&v) = self.h_cache.get(s) {
            return v;
        }
        let v = self.relaxed.lmcut(s);
        self.h_cache.insert(s.clone(), v);
        v
    }

    /// Returns `None` when the budget runs out.
    fn explore(&mut self, init: &Bits, bound: u32) -> Option<Explored> {
        let mut index: HashMap<Bits, u32> = HashMap::new();
        let mut states = vec![init.clone()];
        let mut g = vec![0u32];
        index.insert(init.clone(), 0);
        let mut edges: Vec<Vec<(u32, u32)>> = vec![Vec::new()];
        let mut bounded = false;
        let mut queue = VecDeque::from([0u32]);
        let mut rejected: HashMap<Bits, ()> = HashMap::new();

        while let Some(u) = queue.pop_front() {
            let su = states[u as usize].clone();
            if self.task.is_goal(&su) {
                continue;
            }
            if !self.budget.spend() {
                return None;
            }
            let gu = g[u as usize];
            for a in 0..self.task.actions.len() {
                if !self.task.applicable(&su, a) {
                    continue;
                }
                let sv = self.task.apply(&su, a);
                if let Some(&v) = index.get(&sv) {
                    edges[u as usize].push((a as u32, v));
                    continue;
                }
                if rejected.contains_key(&sv) {
                    continue;
                }
                match self.h(&sv) {
                    None => {
                        rejected.insert(sv, ());
                    }
                    Some(h) if gu + 1 + h > bound => {
                        bounded = true;
                        rejected.insert(sv, ());
                    }
                    Some(_) => {
                        let v = states.len() as u32;
                        index.insert(sv.clone(), v);
                        states.push(sv);
                        g.push(gu + 1);
                        edges.push(Vec::new());
                        edges[u as usize].push((a as u32, v));
                        queue.push_back(v);
                    }
                }
            }
        }

        let goal: Vec<bool> = states.iter().map(|s| self.task.is_goal(s)).collect();
        let mut reverse: Vec<Vec<u32>> = vec![Vec::new(); states.len()];
        for (u, out) in edges.iter().enumerate() {
            for &(_, v) in out {
                reverse[v as usize].push(u as u32);
            }
        }
        let mut dist = vec![u32::MAX; states.len()];
        let mut queue = VecDeque::new();
        for (i, &is_goal) in goal.iter().enumerate() {
            if is_goal {
                dist[i] = 0;
                queue.push_back(i as u32);
            }
        }
        while let Some(v) = queue.pop_front() {
            for &u in &reverse[v as usize] {
                if dist[u as usize] == u32::MAX {
                    dist[u as usize] = dist[v as usize] + 1;
                    queue.push_back(u);
                }
            }
        }
        Some(Explored { states, goal, edges, dist, bounded })
    }

    /// Appends plans of cost exactly `cost` in lexicographic order until
    /// `out` holds `k`. Returns false when the budget runs out.
    fn enumerate(&mut self, ex: &Explored, cost: u32, k: usize, out: &mut Vec<Vec<u32>>) -> bool {
        if ex.dist[0] > cost {
            return true;
        }
        let mut on_path = vec![false; ex.states.len()];
        let mut path = Vec::new();
        on_path[0] = true;
        self.dfs(ex, 0, cost, k, &mut on_path, &mut path, out)
    }

    #[allow(clippy::too_many_arguments)]
    fn dfs(
        &mut self,
        ex: &Explored,
        u: u32,
        remaining: u32,
        k: usize,
        on_path: &mut [bool],
        path: &mut Vec<u32>,
        out: &mut Vec<Vec<u32>>,
    ) -> bool {
        if !self.budget.spend() {
            return false;
        }
        if ex.goal[u as usize] {
            if remaining == 0 {
                out.push(path.clone());
            }
            return true;
        }
        if remaining == 0 {
            return true;
        }
        for &(a, v) in &ex.edges[u as usize] {
            if out.len() >= k {
                return true;
            }
            if on_path[v as usize] || ex.dist[v as usize] > remaining - 1 {
                continue;
            }
            on_path[v as usize] = true;
            path.push(a);
            let ok = self.dfs(ex, v, remaining - 1, k, on_path, path, out);
            path.pop();
            on_path[v as usize] = false;
            if !ok {
                return false;
            }
        }
        true
    }
}

/// Up to `k` cheapest distinct plans, ties broken lexicographically by the
/// action sequence.
pub fn solve_topk(
    domain: &DomainDef,
    problem: &ProblemDef,
    k: usize,
    node_budget: usize,
) -> Result<TopKResult, TopKError> {
    solve_topk_until(domain, problem, k, node_budget, None)
}

/// [`solve_topk`] that stops like an exhausted budget once `deadline` passes.
pub fn solve_topk_until(
    domain: &DomainDef,
    problem: &ProblemDef,
    k: usize,
    node_budget: usize,
    deadline: Option<Instant>,
) -> Result<TopKResult, TopKError> {
    if k == 0 {
        return Err(TopKError::ZeroK);
    }
    let actions = ground(domain, problem);
    let task = Task::problem(&actions, problem);
    let init = task.encode(&problem.init);

    if task.is_goal(&init) {
        return finish(&actions, problem, vec![Vec::new()], k, false, true, 0);
    }

    let mut search = Search {
        task: &task,
        relaxed: Relaxed::new(&task),
        h_cache: HashMap::new(),
        budget: Budget { used: 0, limit: node_budget, deadline },
    };
    let Some(h0) = search.h(&init) else {
        return Err(TopKError::Unsolvable);
    };

    let mut found: Vec<Vec<u32>> = Vec::new();
    let mut bound = h0;
    let mut explored: Option<Explored> = None;
    loop {
        let reuse = explored.as_ref().is_some_and(|e| !e.bounded);
        if !reuse {
            match search.explore(&init, bound) {
                Some(e) => explored = Some(e),
                None => break,
            }
        }
        let ex = explored.as_ref().expect("explored");
        if !search.enumerate(ex, bound, k, &mut found) {
            break;
        }
        if found.len() >= k {
            let nodes = search.budget.used;
            return finish(&actions, problem, found, k, false, false, nodes);
        }
        // Without a bound the explored graph is the whole reachable space and
        // no simple path is longer than its state count.
        if !ex.bounded && bound as usize >= ex.states.len() {
            if found.is_empty() {
                return Err(TopKError::Unsolvable);
            }
            let nodes = search.budget.used;
            return finish(&actions, problem, found, k, false, true, nodes);
        }
        bound += 1;
    }

    if found.is_empty() {
        if search.budget.limit < node_budget {
            return Err(TopKError::DeadlinePassed);
        }
        return Err(TopKError::BudgetExhausted(node_budget));
    }
    let nodes = search.budget.used.min(node_budget);
    finish(&actions, problem, found, k, true, false, nodes)
}

fn finish(
    actions: &[GroundAction],
    problem: &ProblemDef,
    found: Vec<Vec<u32>>,
    k: usize,
    partial: bool,
    exhausted: bool,
    nodes: usize,
) -> Result<TopKResult, TopKError> {
    let mut plans = Vec::with_capacity(found.len());
    for seq in found.into_iter().take(k) {
        let plan_actions: Vec<GroundAction> = seq.iter().map(|&a| actions[a as usize].clone()).collect();
        let states = simulate_plan(&problem.init, &plan_actions).map_err(|e| TopKError::InvalidPlan(e.to_string()))?;
        if !problem.goal_satisfied_by(states.last().expect("non-empty")) {
            return Err(TopKError::InvalidPlan("final state misses the goal".into()));
        }
        plans.push(Plan { cost: plan_actions.len() as u32, actions: plan_actions });
    }
    Ok(TopKResult { plans, requested_k: k, partial, exhausted, nodes })
}

/// One plan per line, each preceded by a `; cost = C` comment.
pub fn dump_plans(result: &TopKResult) -> String {
    let mut out = String::new();
    for p in &result.plans {
        let _ = writeln!(out, "; cost = {}", p.cost);
        let _ = writeln!(out, "{}", p.labels().join(" "));
    }
    out
}
