//! The discrete state graph: the union of the top-k plan traces with
//! identical symbolic states merged.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt::Write;

use thiserror::Error;

use crate::pddl::{apply, GroundAction, SymbolicState};
use crate::topk::TopKResult;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("cannot build a graph from an empty plan set")]
    EmptyPlanSet,
    #[error("plan {plan} step {step} is not applicable: {reason}")]
    InvalidPlan { plan: usize, step: usize, reason: String },
    #[error("state is not a node of the graph")]
    NotInGraph,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub src: usize,
    pub action: GroundAction,
    pub dst: usize,
}

#[derive(Debug, Clone)]
pub struct DiscreteStateGraph {
    states: Vec<SymbolicState>,
    index: HashMap<SymbolicState, usize>,
    edges: Vec<Edge>,
    outgoing: Vec<Vec<usize>>,
    initial: usize,
    goal_ids: BTreeSet<usize>,
    dist: Vec<Option<u32>>,
}

/// Node ids follow first appearance along the plans in order; goal nodes are
/// the plan end states.
pub fn build_graph(plans: &TopKResult, s0: &SymbolicState) -> Result<DiscreteStateGraph, GraphError> {
    if plans.plans.is_empty() {
        return Err(GraphError::EmptyPlanSet);
    }
    let mut g = DiscreteStateGraph {
        states: Vec::new(),
        index: HashMap::new(),
        edges: Vec::new(),
        outgoing: Vec::new(),
        initial: 0,
        goal_ids: BTreeSet::new(),
        dist: Vec::new(),
    };
    g.intern(s0);
    let mut seen_edges: BTreeSet<(usize, GroundAction, usize)> = BTreeSet::new();
    for (pi, plan) in plans.plans.iter().enumerate() {
        let mut state = s0.clone();
        let mut src = 0;
        for (step, action) in plan.actions.iter().enumerate() {
            let next = apply(&state, action).map_err(|e| GraphError::InvalidPlan {
                plan: pi,
                step,
                reason: e.reason,
            })?;
            let dst = g.intern(&next);
            if seen_edges.insert((src, action.clone(), dst)) {
                g.outgoing[src].push(g.edges.len());
                g.edges.push(Edge { src, action: action.clone(), dst });
            }
            state = next;
            src = dst;
        }
        g.goal_ids.insert(src);
    }
    for out in &mut g.outgoing {
        out.sort_by(|&a, &b| g.edges[a].action.cmp(&g.edges[b].action).then(g.edges[a].dst.cmp(&g.edges[b].dst)));
    }
    g.dist = g.backward_bfs();
    Ok(g)
}

impl DiscreteStateGraph {
    fn intern(&mut self, s: &SymbolicState) -> usize {
        if let Some(&id) = self.index.get(s) {
            return id;
        }
        let id = self.states.len();
        self.states.push(s.clone());
        self.index.insert(s.clone(), id);
        self.outgoing.push(Vec::new());
        id
    }

    fn backward_bfs(&self) -> Vec<Option<u32>> {
        let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); self.states.len()];
        for e in &self.edges {
            incoming[e.dst].push(e.src);
        }
        let mut dist = vec![None; self.states.len()];
        let mut queue = VecDeque::new();
        for &g in &self.goal_ids {
            dist[g] = Some(0);
            queue.push_back(g);
        }
        while let Some(v) = queue.pop_front() {
            let d = dist[v].expect("queued nodes have a distance");
            for &u in &incoming[v] {
                if dist[u].is_none() {
                    dist[u] = Some(d + 1);
                    queue.push_back(u);
                }
            }
        }
        dist
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn goal_ids(&self) -> &BTreeSet<usize> {
        &self.goal_ids
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn state(&self, id: usize) -> &SymbolicState {
        &self.states[id]
    }

    pub fn node_id(&self, s: &SymbolicState) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn out_edges(&self, id: usize) -> impl Iterator<Item = &Edge> {
        self.outgoing[id].iter().map(|&e| &self.edges[e])
    }

    /// Outgoing edge actions of `s`, sorted by action.
    pub fn admissible_actions(&self, s: &SymbolicState) -> Result<Vec<GroundAction>, GraphError> {
        let id = self.node_id(s).ok_or(GraphError::NotInGraph)?;
        let mut out: Vec<GroundAction> = self.out_edges(id).map(|e| e.action.clone()).collect();
        out.dedup();
        Ok(out)
    }

    /// Shortest number of edges from `s` to a goal node; `None` if no goal
    /// node is reachable.
    pub fn distance_to_goal(&self, s: &SymbolicState) -> Result<Option<u32>, GraphError> {
        let id = self.node_id(s).ok_or(GraphError::NotInGraph)?;
        Ok(self.dist[id])
    }

    /// Graphviz DOT text: one node per line, one labelled edge per line.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph G {\n");
        for (id, s) in self.states.iter().enumerate() {
            let shape = if self.goal_ids.contains(&id) { "doublecircle" } else { "circle" };
            let _ = writeln!(out, "  n{id} [shape={shape}, tooltip=\"{s}\"];");
        }
        for e in &self.edges {
            let _ = writeln!(out, "  n{} -> n{} [label=\"{}\"];", e.src, e.dst, e.action.label());
        }
        out.push_str("}\n");
        out
    }
}
