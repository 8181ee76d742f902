use std::fmt::Write;

use super::{AtomTemplate, DomainDef, GroundAtom, ProblemDef, Typed, ROOT_TYPE};

fn typed(out: &mut String, items: &[Typed]) {
    for (i, t) in items.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{} - {}", t.name, t.ty);
    }
}

fn template(out: &mut String, a: &AtomTemplate, negated: bool) {
    if negated {
        out.push_str("(not ");
    }
    out.push('(');
    out.push_str(&a.predicate);
    for arg in &a.args {
        out.push(' ');
        out.push_str(arg);
    }
    out.push(')');
    if negated {
        out.push(')');
    }
}

/// Normalized domain text: one section per block, explicit types everywhere.
pub fn emit_domain(d: &DomainDef) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "(define (domain {})", d.name);
    if !d.requirements.is_empty() {
        let _ = writeln!(out, "  (:requirements {})", d.requirements.join(" "));
    }
    if !d.types.is_empty() {
        out.push_str("  (:types");
        for t in &d.types {
            let _ = write!(out, " {} - {}", t.name, t.parent.as_deref().unwrap_or(ROOT_TYPE));
        }
        out.push_str(")\n");
    }
    if !d.predicates.is_empty() {
        out.push_str("  (:predicates");
        for p in &d.predicates {
            out.push_str("\n    (");
            out.push_str(&p.name);
            if !p.params.is_empty() {
                out.push(' ');
                typed(&mut out, &p.params);
            }
            out.push(')');
        }
        out.push_str(")\n");
    }
    for a in &d.actions {
        let _ = writeln!(out, "  (:action {}", a.name);
        out.push_str("    :parameters (");
        typed(&mut out, &a.params);
        out.push_str(")\n    :precondition (and");
        for l in &a.precond {
            out.push(' ');
            template(&mut out, &l.atom, !l.positive);
        }
        out.push_str(")\n    :effect (and");
        for e in &a.add {
            out.push(' ');
            template(&mut out, e, false);
        }
        for e in &a.del {
            out.push(' ');
            template(&mut out, e, true);
        }
        out.push_str("))\n");
    }
    out.push_str(")\n");
    out
}

fn ground_atom(out: &mut String, a: &GroundAtom) {
    let _ = write!(out, "{a}");
}

pub fn emit_problem(p: &ProblemDef) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "(define (problem {})", p.name);
    let _ = writeln!(out, "  (:domain {})", p.domain);
    out.push_str("  (:objects");
    for o in &p.objects {
        let _ = write!(out, " {} - {}", o.name, o.ty);
    }
    out.push_str(")\n  (:init");
    for a in p.init.iter() {
        out.push_str("\n    ");
        ground_atom(&mut out, a);
    }
    out.push_str(")\n  (:goal (and");
    for a in &p.goal {
        out.push_str("\n    ");
        ground_atom(&mut out, a);
    }
    out.push_str(")))\n");
    out
}
