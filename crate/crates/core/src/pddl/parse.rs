use std::collections::{BTreeMap, BTreeSet};

use super::sexpr::{read, Pos, SExpr};
use super::{
    ActionSchema, AtomTemplate, DomainDef, GroundAtom, Literal, PddlError, PredicateDecl, ProblemDef,
    SymbolicState, TypeDecl, Typed, ROOT_TYPE,
};

const SUPPORTED_REQUIREMENTS: &[&str] = &[":strips", ":typing", ":negative-preconditions"];

struct TypedEntry {
    name: String,
    pos: Pos,
    ty: String,
    ty_pos: Pos,
}

fn syntax(pos: Pos, msg: impl Into<String>) -> PddlError {
    PddlError::Syntax { pos, msg: msg.into() }
}

fn atom_of(e: &SExpr) -> Result<&str, PddlError> {
    e.as_atom().ok_or_else(|| syntax(e.pos(), "expected a symbol, found a list"))
}

fn list_of(e: &SExpr) -> Result<&[SExpr], PddlError> {
    e.as_list().ok_or_else(|| syntax(e.pos(), "expected a list"))
}

/// `a b - t c - u d` → (a,t) (b,t) (c,u) (d,object)
fn typed_list(items: &[SExpr]) -> Result<Vec<TypedEntry>, PddlError> {
    let mut out = Vec::new();
    let mut pending: Vec<(String, Pos)> = Vec::new();
    let mut i = 0;
    while i < items.len() {
        let text = atom_of(&items[i])?;
        if text == "-" {
            let ty_expr = items
                .get(i + 1)
                .ok_or_else(|| syntax(items[i].pos(), "`-` must be followed by a type"))?;
            if ty_expr.as_list().is_some() {
                return Err(PddlError::Unsupported {
                    pos: ty_expr.pos(),
                    msg: "`either` types".into(),
                });
            }
            let ty = atom_of(ty_expr)?.to_string();
            if pending.is_empty() {
                return Err(syntax(items[i].pos(), "type annotation without names"));
            }
            for (name, pos) in pending.drain(..) {
                out.push(TypedEntry { name, pos, ty: ty.clone(), ty_pos: ty_expr.pos() });
            }
            i += 2;
        } else {
            pending.push((text.to_string(), items[i].pos()));
            i += 1;
        }
    }
    for (name, pos) in pending {
        out.push(TypedEntry { name, pos, ty: ROOT_TYPE.to_string(), ty_pos: pos });
    }
    Ok(out)
}

fn expect_define<'a>(root: &'a SExpr, kind: &str) -> Result<(String, &'a [SExpr]), PddlError> {
    let items = list_of(root)?;
    if root.head() != Some("define") {
        return Err(syntax(root.pos(), "expected `(define ...)`"));
    }
    let header = items.get(1).ok_or_else(|| syntax(root.pos(), format!("missing `({kind} NAME)`")))?;
    let h = list_of(header)?;
    if header.head() != Some(kind) || h.len() != 2 {
        return Err(syntax(header.pos(), format!("expected `({kind} NAME)`")));
    }
    Ok((atom_of(&h[1])?.to_string(), &items[2..]))
}

pub fn parse_domain(text: &str) -> Result<DomainDef, PddlError> {
    let root = read(text)?;
    let (name, sections) = expect_define(&root, "domain")?;

    let mut domain = DomainDef {
        name,
        requirements: Vec::new(),
        types: Vec::new(),
        predicates: Vec::new(),
        actions: Vec::new(),
    };

    for section in sections {
        let items = list_of(section)?;
        match section.head() {
            Some(":requirements") => {
                for r in &items[1..] {
                    let req = atom_of(r)?;
                    if !SUPPORTED_REQUIREMENTS.contains(&req) {
                        return Err(PddlError::Unsupported {
                            pos: r.pos(),
                            msg: format!("requirement `{req}`"),
                        });
                    }
                    domain.requirements.push(req.to_string());
                }
            }
            Some(":types") => parse_types(&items[1..], &mut domain)?,
            Some(":predicates") => {
                for p in &items[1..] {
                    let decl = parse_predicate_decl(p, &domain)?;
                    if domain.predicate(&decl.name).is_some() {
                        return Err(PddlError::Duplicate { pos: p.pos(), what: "predicate", name: decl.name });
                    }
                    domain.predicates.push(decl);
                }
            }
            Some(":action") => {
                let action = parse_action(section, &domain)?;
                if domain.action(&action.name).is_some() {
                    return Err(PddlError::Duplicate { pos: section.pos(), what: "action", name: action.name });
                }
                domain.actions.push(action);
            }
            Some(":constants") => {
                return Err(PddlError::Unsupported { pos: section.pos(), msg: "`:constants`".into() })
            }
            _ => return Err(syntax(section.pos(), "unknown domain section")),
        }
    }
    Ok(domain)
}

fn parse_types(items: &[SExpr], domain: &mut DomainDef) -> Result<(), PddlError> {
    let entries = typed_list(items)?;
    for e in &entries {
        if e.name == ROOT_TYPE {
            continue;
        }
        if domain.types.iter().any(|t| t.name == e.name) {
            return Err(PddlError::Duplicate { pos: e.pos, what: "type", name: e.name.clone() });
        }
        domain.types.push(TypeDecl { name: e.name.clone(), parent: Some(e.ty.clone()) });
    }
    // Parents may be declared later in the same list.
    for e in &entries {
        if !domain.has_type(&e.ty) {
            return Err(PddlError::UnknownType { pos: e.ty_pos, name: e.ty.clone() });
        }
    }
    Ok(())
}

fn parse_params(expr: &SExpr, domain: &DomainDef) -> Result<Vec<Typed>, PddlError> {
    let entries = typed_list(list_of(expr)?)?;
    let mut out: Vec<Typed> = Vec::new();
    for e in entries {
        if !e.name.starts_with('?') {
            return Err(syntax(e.pos, format!("parameter `{}` must start with `?`", e.name)));
        }
        if !domain.has_type(&e.ty) {
            return Err(PddlError::UnknownType { pos: e.ty_pos, name: e.ty });
        }
        if out.iter().any(|p| p.name == e.name) {
            return Err(PddlError::Duplicate { pos: e.pos, what: "parameter", name: e.name });
        }
        out.push(Typed { name: e.name, ty: e.ty });
    }
    Ok(out)
}

fn parse_predicate_decl(expr: &SExpr, domain: &DomainDef) -> Result<PredicateDecl, PddlError> {
    let items = list_of(expr)?;
    let name = items.first().ok_or_else(|| syntax(expr.pos(), "empty predicate declaration"))?;
    let name = atom_of(name)?.to_string();
    let params = parse_params(&SExpr::List { items: items[1..].to_vec(), pos: expr.pos() }, domain)?;
    Ok(PredicateDecl { name, params })
}

fn parse_action(expr: &SExpr, domain: &DomainDef) -> Result<ActionSchema, PddlError> {
    let items = list_of(expr)?;
    let name = items.get(1).ok_or_else(|| syntax(expr.pos(), "action without a name"))?;
    let name = atom_of(name)?.to_string();

    let mut params = Vec::new();
    let mut precond = Vec::new();
    let mut add = Vec::new();
    let mut del = Vec::new();

    let mut i = 2;
    while i < items.len() {
        let key = atom_of(&items[i])?;
        let value = items
            .get(i + 1)
            .ok_or_else(|| syntax(items[i].pos(), format!("`{key}` without a value")))?;
        match key {
            ":parameters" => params = parse_params(value, domain)?,
            ":precondition" => {
                for (lit, pos) in conjunction(value)? {
                    check_atom(&lit.atom, pos, &params, domain)?;
                    precond.push(lit);
                }
            }
            ":effect" => {
                for (lit, pos) in conjunction(value)? {
                    check_atom(&lit.atom, pos, &params, domain)?;
                    if lit.positive {
                        add.push(lit.atom);
                    } else {
                        del.push(lit.atom);
                    }
                }
            }
            _ => return Err(syntax(items[i].pos(), format!("unknown action key `{key}`"))),
        }
        i += 2;
    }

    if let Some(both) = add.iter().find(|a| del.contains(a)) {
        return Err(PddlError::Unsupported {
            pos: expr.pos(),
            msg: format!("`{}` both adds and deletes ({} ...)", name, both.predicate),
        });
    }
    Ok(ActionSchema { name, params, precond, add, del })
}

/// Flattens `(and l1 l2 ...)`, a single literal, or `()` into literals.
fn conjunction(expr: &SExpr) -> Result<Vec<(Literal, Pos)>, PddlError> {
    let items = list_of(expr)?;
    if items.is_empty() {
        return Ok(Vec::new());
    }
    if expr.head() == Some("and") {
        let mut out = Vec::new();
        for item in &items[1..] {
            out.extend(conjunction(item)?);
        }
        return Ok(out);
    }
    Ok(vec![(literal(expr)?, expr.pos())])
}

fn literal(expr: &SExpr) -> Result<Literal, PddlError> {
    let items = list_of(expr)?;
    match expr.head() {
        Some("not") => {
            if items.len() != 2 {
                return Err(syntax(expr.pos(), "`not` takes exactly one atom"));
            }
            Ok(Literal { atom: template(&items[1])?, positive: false })
        }
        Some(op @ ("or" | "imply" | "forall" | "exists" | "when" | "increase" | "=")) => {
            Err(PddlError::Unsupported { pos: expr.pos(), msg: format!("`{op}`") })
        }
        _ => Ok(Literal { atom: template(expr)?, positive: true }),
    }
}

fn template(expr: &SExpr) -> Result<AtomTemplate, PddlError> {
    let items = list_of(expr)?;
    let head = items.first().ok_or_else(|| syntax(expr.pos(), "empty atom"))?;
    let predicate = atom_of(head)?.to_string();
    let args = items[1..].iter().map(|a| atom_of(a).map(str::to_string)).collect::<Result<_, _>>()?;
    Ok(AtomTemplate { predicate, args })
}

fn check_atom(atom: &AtomTemplate, pos: Pos, params: &[Typed], domain: &DomainDef) -> Result<(), PddlError> {
    let decl = domain.predicate(&atom.predicate).ok_or_else(|| PddlError::Undeclared {
        pos,
        what: "predicate",
        name: atom.predicate.clone(),
    })?;
    if decl.params.len() != atom.args.len() {
        return Err(PddlError::Arity {
            pos,
            name: atom.predicate.clone(),
            expected: decl.params.len(),
            found: atom.args.len(),
        });
    }
    for (arg, slot) in atom.args.iter().zip(&decl.params) {
        if !arg.starts_with('?') {
            return Err(PddlError::Unsupported { pos, msg: format!("constant `{arg}` in action schema") });
        }
        let param = params.iter().find(|p| &p.name == arg).ok_or_else(|| PddlError::Undeclared {
            pos,
            what: "variable",
            name: arg.clone(),
        })?;
        if !domain.is_subtype(&param.ty, &slot.ty) {
            return Err(PddlError::TypeMismatch {
                pos,
                name: arg.clone(),
                found: param.ty.clone(),
                expected: slot.ty.clone(),
            });
        }
    }
    Ok(())
}

pub fn parse_problem(text: &str, domain: &DomainDef) -> Result<ProblemDef, PddlError> {
    let root = read(text)?;
    let (name, sections) = expect_define(&root, "problem")?;

    let mut domain_name = None;
    let mut objects: Vec<Typed> = Vec::new();
    let mut init = SymbolicState::new();
    let mut goal = BTreeSet::new();
    let mut types: BTreeMap<String, String> = BTreeMap::new();

    for section in sections {
        let items = list_of(section)?;
        match section.head() {
            Some(":domain") => {
                let d = items.get(1).ok_or_else(|| syntax(section.pos(), "missing domain name"))?;
                let d = atom_of(d)?;
                if d != domain.name {
                    return Err(PddlError::Undeclared { pos: items[1].pos(), what: "domain", name: d.to_string() });
                }
                domain_name = Some(d.to_string());
            }
            Some(":objects") => {
                for e in typed_list(&items[1..])? {
                    if !domain.has_type(&e.ty) {
                        return Err(PddlError::UnknownType { pos: e.ty_pos, name: e.ty });
                    }
                    if types.contains_key(&e.name) {
                        return Err(PddlError::Duplicate { pos: e.pos, what: "object", name: e.name });
                    }
                    types.insert(e.name.clone(), e.ty.clone());
                    objects.push(Typed { name: e.name, ty: e.ty });
                }
            }
            Some(":init") => {
                for a in &items[1..] {
                    if a.head() == Some("not") {
                        return Err(PddlError::Unsupported { pos: a.pos(), msg: "negative initial literal".into() });
                    }
                    init.insert(ground_atom(a, domain, &types)?);
                }
            }
            Some(":goal") => {
                let g = items.get(1).ok_or_else(|| syntax(section.pos(), "empty goal"))?;
                for (lit, pos) in conjunction(g)? {
                    if !lit.positive {
                        return Err(PddlError::Unsupported { pos, msg: "negative goal literal".into() });
                    }
                    let expr = SExpr::List {
                        items: std::iter::once(lit.atom.predicate.clone())
                            .chain(lit.atom.args.iter().cloned())
                            .map(|text| SExpr::Atom { text, pos })
                            .collect(),
                        pos,
                    };
                    goal.insert(ground_atom(&expr, domain, &types)?);
                }
            }
            _ => return Err(syntax(section.pos(), "unknown problem section")),
        }
    }

    let domain_name = domain_name.ok_or_else(|| syntax(root.pos(), "missing `(:domain NAME)`"))?;
    Ok(ProblemDef { name, domain: domain_name, objects, init, goal })
}

fn ground_atom(expr: &SExpr, domain: &DomainDef, types: &BTreeMap<String, String>) -> Result<GroundAtom, PddlError> {
    let t = template(expr)?;
    let pos = expr.pos();
    let decl = domain.predicate(&t.predicate).ok_or_else(|| PddlError::Undeclared {
        pos,
        what: "predicate",
        name: t.predicate.clone(),
    })?;
    if decl.params.len() != t.args.len() {
        return Err(PddlError::Arity {
            pos,
            name: t.predicate.clone(),
            expected: decl.params.len(),
            found: t.args.len(),
        });
    }
    for (arg, slot) in t.args.iter().zip(&decl.params) {
        let ty = types.get(arg).ok_or_else(|| PddlError::Undeclared { pos, what: "object", name: arg.clone() })?;
        if !domain.is_subtype(ty, &slot.ty) {
            return Err(PddlError::TypeMismatch {
                pos,
                name: arg.clone(),
                found: ty.clone(),
                expected: slot.ty.clone(),
            });
        }
    }
    Ok(GroundAtom { predicate: t.predicate, args: t.args })
}
