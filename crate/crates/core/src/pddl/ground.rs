use std::collections::{BTreeMap, BTreeSet};

use super::{ActionSchema, AtomTemplate, DomainDef, GroundAction, GroundAtom, ProblemDef};

fn instantiate(t: &AtomTemplate, binding: &BTreeMap<&str, &str>) -> GroundAtom {
    GroundAtom {
        predicate: t.predicate.clone(),
        args: t.args.iter().map(|a| binding[a.as_str()].to_string()).collect(),
    }
}

fn ground_schema(schema: &ActionSchema, binding: &[&str]) -> GroundAction {
    let map: BTreeMap<&str, &str> = schema
        .params
        .iter()
        .map(|p| p.name.as_str())
        .zip(binding.iter().copied())
        .collect();
    let mut precond_pos = BTreeSet::new();
    let mut precond_neg = BTreeSet::new();
    for lit in &schema.precond {
        let atom = instantiate(&lit.atom, &map);
        if lit.positive {
            precond_pos.insert(atom);
        } else {
            precond_neg.insert(atom);
        }
    }
    GroundAction {
        name: schema.name.clone(),
        args: binding.iter().map(|s| s.to_string()).collect(),
        precond_pos,
        precond_neg,
        add: schema.add.iter().map(|a| instantiate(a, &map)).collect(),
        del: schema.del.iter().map(|a| instantiate(a, &map)).collect(),
    }
}

/// All type-correct bindings of every schema, sorted by `(name, args)`.
///
/// Bindings are injective: distinct parameters take distinct objects.
pub fn ground(domain: &DomainDef, problem: &ProblemDef) -> Vec<GroundAction> {
    let mut out = BTreeSet::new();
    for schema in &domain.actions {
        let candidates: Vec<Vec<&str>> = schema
            .params
            .iter()
            .map(|p| {
                problem
                    .objects
                    .iter()
                    .filter(|o| domain.is_subtype(&o.ty, &p.ty))
                    .map(|o| o.name.as_str())
                    .collect()
            })
            .collect();
        let mut binding = Vec::with_capacity(candidates.len());
        bind(&candidates, &mut binding, &mut |b| {
            out.insert(ground_schema(schema, b));
        });
    }
    out.into_iter().collect()
}

fn bind<'a>(candidates: &[Vec<&'a str>], binding: &mut Vec<&'a str>, emit: &mut dyn FnMut(&[&'a str])) {
    let depth = binding.len();
    if depth == candidates.len() {
        emit(binding);
        return;
    }
    for &obj in &candidates[depth] {
        if binding.contains(&obj) {
            continue;
        }
        binding.push(obj);
        bind(candidates, binding, emit);
        binding.pop();
    }
}
