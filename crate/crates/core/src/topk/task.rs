//! Interned propositional task: atoms become bit positions.

use std::collections::HashMap;

use crate::pddl::{GroundAction, GroundAtom, ProblemDef, SymbolicState};

pub(crate) type Bits = Box<[u64]>;

pub(crate) fn words(n: usize) -> usize {
    n.div_ceil(64).max(1)
}

pub(crate) fn set(bits: &mut [u64], i: u32) {
    bits[(i / 64) as usize] |= 1 << (i % 64);
}

pub(crate) fn get(bits: &[u64], i: u32) -> bool {
    bits[(i / 64) as usize] >> (i % 64) & 1 == 1
}

fn subset(a: &[u64], b: &[u64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x & !y == 0)
}

fn disjoint(a: &[u64], b: &[u64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x & y == 0)
}

pub(crate) struct IAction {
    pub pre: Bits,
    pub neg: Bits,
    pub add: Bits,
    pub del: Bits,
    pub pre_list: Vec<u32>,
    pub add_list: Vec<u32>,
}

pub(crate) struct Task {
    pub atoms: Vec<GroundAtom>,
    pub index: HashMap<GroundAtom, u32>,
    pub actions: Vec<IAction>,
    pub goal: Bits,
    pub goal_list: Vec<u32>,
}

impl Task {
    pub fn new(actions: &[GroundAction], init: &SymbolicState, goal: &std::collections::BTreeSet<GroundAtom>) -> Task {
        let mut atoms = Vec::new();
        let mut index = HashMap::new();
        let mut intern = |a: &GroundAtom| {
            if !index.contains_key(a) {
                index.insert(a.clone(), atoms.len() as u32);
                atoms.push(a.clone());
            }
        };
        init.iter().for_each(&mut intern);
        goal.iter().for_each(&mut intern);
        for a in actions {
            a.precond_pos.iter().chain(&a.precond_neg).chain(&a.add).chain(&a.del).for_each(&mut intern);
        }
        let w = words(atoms.len());
        let to_bits = |set_of: &mut dyn Iterator<Item = &GroundAtom>| {
            let mut b = vec![0u64; w].into_boxed_slice();
            for a in set_of {
                set(&mut b, index[a]);
            }
            b
        };
        let iactions = actions
            .iter()
            .map(|a| IAction {
                pre: to_bits(&mut a.precond_pos.iter()),
                neg: to_bits(&mut a.precond_neg.iter()),
                add: to_bits(&mut a.add.iter()),
                del: to_bits(&mut a.del.iter()),
                pre_list: a.precond_pos.iter().map(|x| index[x]).collect(),
                add_list: a.add.iter().map(|x| index[x]).collect(),
            })
            .collect();
        let goal_bits = to_bits(&mut goal.iter());
        let goal_list = goal.iter().map(|x| index[x]).collect();
        Task { atoms, index, actions: iactions, goal: goal_bits, goal_list }
    }

    pub fn problem(actions: &[GroundAction], problem: &ProblemDef) -> Task {
        Task::new(actions, &problem.init, &problem.goal)
    }

    pub fn encode(&self, s: &SymbolicState) -> Bits {
        let mut b = vec![0u64; words(self.atoms.len())].into_boxed_slice();
        for a in s.iter() {
            if let Some(&i) = self.index.get(a) {
                set(&mut b, i);
            }
        }
        b
    }

    pub fn applicable(&self, s: &[u64], a: usize) -> bool {
        let act = &self.actions[a];
        subset(&act.pre, s) && disjoint(&act.neg, s)
    }

    pub fn apply(&self, s: &[u64], a: usize) -> Bits {
        let act = &self.actions[a];
        s.iter().zip(act.del.iter().zip(act.add.iter())).map(|(x, (d, ad))| (x & !d) | ad).collect()
    }

    pub fn is_goal(&self, s: &[u64]) -> bool {
        subset(&self.goal, s)
    }
}
