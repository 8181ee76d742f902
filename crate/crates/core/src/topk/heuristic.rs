//! Delete-relaxation heuristics: goal count, h_max, h_add and LM-cut.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use super::task::{get, Task};
use crate::pddl::{GroundAction, GroundAtom, SymbolicState};

pub const INF: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Heuristic {
    GoalCount,
    HMax,
    HAdd,
    LmCut,
}

/// Number of goal atoms missing from `state`.
pub fn goal_count(state: &SymbolicState, goal: &BTreeSet<GroundAtom>) -> u32 {
    goal.iter().filter(|g| !state.contains(g)).count() as u32
}

/// Evaluates `kind` on `state`; `None` means the goal is relaxed-unreachable.
pub fn heuristic(
    kind: Heuristic,
    actions: &[GroundAction],
    state: &SymbolicState,
    goal: &BTreeSet<GroundAtom>,
) -> Option<u32> {
    if kind == Heuristic::GoalCount {
        return Some(goal_count(state, goal));
    }
    let task = Task::new(actions, state, goal);
    let relaxed = Relaxed::new(&task);
    let s = task.encode(state);
    match kind {
        Heuristic::HMax => relaxed.h_max(&s),
        Heuristic::HAdd => relaxed.h_add(&s),
        Heuristic::LmCut => relaxed.lmcut(&s),
        Heuristic::GoalCount => unreachable!(),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Combine {
    Max,
    Sum,
}

/// Relaxed view of a task with an extra goal atom reached by a zero-cost
/// action whose preconditions are the goal, and an extra source atom that
/// supports precondition-free actions.
pub(crate) struct Relaxed {
    n_atoms: usize,
    goal_atom: u32,
    source_atom: u32,
    pre: Vec<Vec<u32>>,
    add: Vec<Vec<u32>>,
    cost: Vec<u32>,
    consumers: Vec<Vec<u32>>,
}

impl Relaxed {
    pub fn new(task: &Task) -> Relaxed {
        let n = task.atoms.len();
        let goal_atom = n as u32;
        let source_atom = n as u32 + 1;
        let mut pre: Vec<Vec<u32>> = Vec::new();
        let mut add: Vec<Vec<u32>> = Vec::new();
        let mut cost = Vec::new();
        for a in &task.actions {
            pre.push(if a.pre_list.is_empty() { vec![source_atom] } else { a.pre_list.clone() });
            add.push(a.add_list.clone());
            cost.push(1);
        }
        pre.push(if task.goal_list.is_empty() { vec![source_atom] } else { task.goal_list.clone() });
        add.push(vec![goal_atom]);
        cost.push(0);
        let mut consumers = vec![Vec::new(); n + 2];
        for (i, p) in pre.iter().enumerate() {
            for &x in p {
                consumers[x as usize].push(i as u32);
            }
        }
        Relaxed { n_atoms: n + 2, goal_atom, source_atom, pre, add, cost, consumers }
    }

    fn sources(&self, s: &[u64]) -> impl Iterator<Item = u32> + '_ {
        let n = self.n_atoms as u32 - 2;
        let src = self.source_atom;
        let owned: Vec<u32> = (0..n).filter(|&i| get(s, i)).chain(std::iter::once(src)).collect();
        owned.into_iter()
    }

    /// Generalized Dijkstra over atoms; returns per-atom and per-action costs.
    fn propagate(&self, s: &[u64], costs: &[u32], combine: Combine) -> (Vec<u32>, Vec<u32>) {
        let mut atom_cost = vec![INF; self.n_atoms];
        let mut act_cost = vec![INF; self.pre.len()];
        let mut remaining: Vec<u32> = self.pre.iter().map(|p| p.len() as u32).collect();
        let mut acc: Vec<u32> = vec![0; self.pre.len()];
        let mut heap = BinaryHeap::new();
        for a in self.sources(s) {
            atom_cost[a as usize] = 0;
            heap.push(Reverse((0u32, a)));
        }
        while let Some(Reverse((c, p))) = heap.pop() {
            if c > atom_cost[p as usize] {
                continue;
            }
            for &a in &self.consumers[p as usize] {
                let ai = a as usize;
                acc[ai] = match combine {
                    Combine::Max => acc[ai].max(c),
                    Combine::Sum => acc[ai].saturating_add(c),
                };
                remaining[ai] -= 1;
                if remaining[ai] == 0 {
                    let total = acc[ai].saturating_add(costs[ai]);
                    act_cost[ai] = total;
                    for &e in &self.add[ai] {
                        if total < atom_cost[e as usize] {
                            atom_cost[e as usize] = total;
                            heap.push(Reverse((total, e)));
                        }
                    }
                }
            }
        }
        (atom_cost, act_cost)
    }

    fn value(&self, atom_cost: &[u32]) -> Option<u32> {
        match atom_cost[self.goal_atom as usize] {
            INF => None,
            v => Some(v),
        }
    }

    pub fn h_max(&self, s: &[u64]) -> Option<u32> {
        self.value(&self.propagate(s, &self.cost, Combine::Max).0)
    }

    pub fn h_add(&self, s: &[u64]) -> Option<u32> {
        self.value(&self.propagate(s, &self.cost, Combine::Sum).0)
    }

    /// Landmark-cut: admissible, and never below h_max.
    pub fn lmcut(&self, s: &[u64]) -> Option<u32> {
        let mut costs = self.cost.clone();
        let mut h = 0u32;
        let n_act = self.pre.len();
        loop {
            let (hmax, act_cost) = self.propagate(s, &costs, Combine::Max);
            match hmax[self.goal_atom as usize] {
                INF => return None,
                0 => return Some(h),
                _ => {}
            }
            let supporter: Vec<u32> = (0..n_act)
                .map(|a| {
                    if act_cost[a] == INF {
                        return INF;
                    }
                    *self.pre[a].iter().max_by_key(|&&p| (hmax[p as usize], Reverse(p))).expect("non-empty")
                })
                .collect();

            let mut zone = vec![false; self.n_atoms];
            zone[self.goal_atom as usize] = true;
            let mut producers: Vec<Vec<u32>> = vec![Vec::new(); self.n_atoms];
            for (a, &sup) in supporter.iter().enumerate() {
                if sup != INF {
                    for &e in &self.add[a] {
                        producers[e as usize].push(a as u32);
                    }
                }
            }
            let mut stack = vec![self.goal_atom];
            while let Some(p) = stack.pop() {
                for &a in &producers[p as usize] {
                    let sp = supporter[a as usize];
                    if costs[a as usize] == 0 && !zone[sp as usize] {
                        zone[sp as usize] = true;
                        stack.push(sp);
                    }
                }
            }

            let mut by_supporter: Vec<Vec<u32>> = vec![Vec::new(); self.n_atoms];
            for a in 0..n_act {
                if supporter[a] != INF {
                    by_supporter[supporter[a] as usize].push(a as u32);
                }
            }
            let mut seen = vec![false; self.n_atoms];
            let mut in_cut = vec![false; n_act];
            let mut stack: Vec<u32> = self.sources(s).collect();
            for &p in &stack {
                seen[p as usize] = true;
            }
            while let Some(p) = stack.pop() {
                for &a in &by_supporter[p as usize] {
                    for &e in &self.add[a as usize] {
                        if zone[e as usize] {
                            in_cut[a as usize] = true;
                        } else if !seen[e as usize] {
                            seen[e as usize] = true;
                            stack.push(e);
                        }
                    }
                }
            }
            let m = (0..n_act).filter(|&a| in_cut[a]).map(|a| costs[a]).min().expect("cut is non-empty");
            h += m;
            for a in 0..n_act {
                if in_cut[a] {
                    costs[a] -= m;
                }
            }
        }
    }
}
