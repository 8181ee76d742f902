//! STRIPS-with-types PDDL: parsing, normalized emission, grounding and the
//! symbolic transition semantics.
//!
//! Supported requirements are `:strips`, `:typing` and
//! `:negative-preconditions`. Goals are conjunctions of positive atoms.

mod emit;
mod ground;
mod parse;
pub mod sexpr;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use emit::{emit_domain, emit_problem};
pub use ground::ground;
pub use parse::{parse_domain, parse_problem};
pub use sexpr::Pos;

/// Name of the implicit root type.
pub const ROOT_TYPE: &str = "object";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PddlError {
    #[error("{pos}: syntax error: {msg}")]
    Syntax { pos: Pos, msg: String },
    #[error("{pos}: unknown type `{name}`")]
    UnknownType { pos: Pos, name: String },
    #[error("{pos}: `{name}` expects {expected} argument(s), found {found}")]
    Arity { pos: Pos, name: String, expected: usize, found: usize },
    #[error("{pos}: duplicate {what} `{name}`")]
    Duplicate { pos: Pos, what: &'static str, name: String },
    #[error("{pos}: undeclared {what} `{name}`")]
    Undeclared { pos: Pos, what: &'static str, name: String },
    #[error("{pos}: `{name}` has type `{found}` where `{expected}` is required")]
    TypeMismatch { pos: Pos, name: String, found: String, expected: String },
    #[error("{pos}: unsupported: {msg}")]
    Unsupported { pos: Pos, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{action} is not applicable: {reason}")]
pub struct PreconditionViolation {
    pub action: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeDecl {
    pub name: String,
    /// `None` only for the root type.
    pub parent: Option<String>,
}

/// A typed variable (`?x - block`) or a typed object (`red - block`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Typed {
    pub name: String,
    pub ty: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateDecl {
    pub name: String,
    pub params: Vec<Typed>,
}

/// Lifted atom whose arguments are schema variables.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AtomTemplate {
    pub predicate: String,
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Literal {
    pub atom: AtomTemplate,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSchema {
    pub name: String,
    pub params: Vec<Typed>,
    pub precond: Vec<Literal>,
    pub add: Vec<AtomTemplate>,
    pub del: Vec<AtomTemplate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainDef {
    pub name: String,
    pub requirements: Vec<String>,
    pub types: Vec<TypeDecl>,
    pub predicates: Vec<PredicateDecl>,
    pub actions: Vec<ActionSchema>,
}

impl DomainDef {
    pub fn predicate(&self, name: &str) -> Option<&PredicateDecl> {
        self.predicates.iter().find(|p| p.name == name)
    }

    pub fn action(&self, name: &str) -> Option<&ActionSchema> {
        self.actions.iter().find(|a| a.name == name)
    }

    pub fn has_type(&self, name: &str) -> bool {
        name == ROOT_TYPE || self.types.iter().any(|t| t.name == name)
    }

    fn parent_of(&self, name: &str) -> Option<&str> {
        if name == ROOT_TYPE {
            return None;
        }
        self.types
            .iter()
            .find(|t| t.name == name)
            .map(|t| t.parent.as_deref().unwrap_or(ROOT_TYPE))
    }

    /// True when `ty` equals `ancestor` or inherits from it.
    pub fn is_subtype(&self, ty: &str, ancestor: &str) -> bool {
        if ancestor == ROOT_TYPE {
            return true;
        }
        let mut current = Some(ty);
        // Bounded walk guards against cyclic declarations.
        for _ in 0..=self.types.len() {
            match current {
                Some(t) if t == ancestor => return true,
                Some(t) => current = self.parent_of(t),
                None => return false,
            }
        }
        false
    }
}

/// Variable-free atom, ordered lexicographically by `(predicate, args)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroundAtom {
    pub predicate: String,
    pub args: Vec<String>,
}

impl GroundAtom {
    pub fn new(predicate: &str, args: &[&str]) -> Self {
        Self {
            predicate: predicate.to_string(),
            args: args.iter().map(|a| a.to_string()).collect(),
        }
    }

    /// Parses the `(pred a b)` notation produced by `Display`.
    pub fn parse(text: &str) -> Option<Self> {
        let inner = text.trim().strip_prefix('(')?.strip_suffix(')')?;
        let mut parts = inner.split_whitespace();
        let predicate = parts.next()?.to_lowercase();
        Some(Self { predicate, args: parts.map(str::to_lowercase).collect() })
    }
}

impl fmt::Display for GroundAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.predicate)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        write!(f, ")")
    }
}

/// A set of ground atoms in canonical order; equal sets compare and hash equal.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SymbolicState(BTreeSet<GroundAtom>);

impl SymbolicState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, atom: &GroundAtom) -> bool {
        self.0.contains(atom)
    }

    pub fn insert(&mut self, atom: GroundAtom) -> bool {
        self.0.insert(atom)
    }

    pub fn remove(&mut self, atom: &GroundAtom) -> bool {
        self.0.remove(atom)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &GroundAtom> {
        self.0.iter()
    }

    pub fn atoms(&self) -> &BTreeSet<GroundAtom> {
        &self.0
    }

    /// True when every goal atom holds.
    pub fn satisfies<'a>(&self, goal: impl IntoIterator<Item = &'a GroundAtom>) -> bool {
        goal.into_iter().all(|g| self.0.contains(g))
    }

    pub fn is_superset(&self, other: &SymbolicState) -> bool {
        self.0.is_superset(&other.0)
    }

    /// Keeps only atoms accepted by `keep`.
    pub fn filtered(&self, mut keep: impl FnMut(&GroundAtom) -> bool) -> SymbolicState {
        SymbolicState(self.0.iter().filter(|a| keep(a)).cloned().collect())
    }
}

impl FromIterator<GroundAtom> for SymbolicState {
    fn from_iter<I: IntoIterator<Item = GroundAtom>>(iter: I) -> Self {
        SymbolicState(iter.into_iter().collect())
    }
}

impl fmt::Display for SymbolicState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, "}}")
    }
}

/// A schema instantiated with one object per parameter.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroundAction {
    pub name: String,
    pub args: Vec<String>,
    pub precond_pos: BTreeSet<GroundAtom>,
    pub precond_neg: BTreeSet<GroundAtom>,
    pub add: BTreeSet<GroundAtom>,
    pub del: BTreeSet<GroundAtom>,
}

impl GroundAction {
    /// `(name arg1 arg2)`; the key used for lexicographic tie-breaking.
    pub fn label(&self) -> String {
        let mut s = format!("({}", self.name);
        for a in &self.args {
            s.push(' ');
            s.push_str(a);
        }
        s.push(')');
        s
    }
}

impl PartialOrd for GroundAction {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for GroundAction {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (&self.name, &self.args)
            .cmp(&(&other.name, &other.args))
            .then_with(|| self.precond_pos.cmp(&other.precond_pos))
            .then_with(|| self.precond_neg.cmp(&other.precond_neg))
            .then_with(|| self.add.cmp(&other.add))
            .then_with(|| self.del.cmp(&other.del))
    }
}

impl fmt::Display for GroundAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemDef {
    pub name: String,
    pub domain: String,
    pub objects: Vec<Typed>,
    pub init: SymbolicState,
    pub goal: BTreeSet<GroundAtom>,
}

impl ProblemDef {
    pub fn object_type(&self, name: &str) -> Option<&str> {
        self.objects.iter().find(|o| o.name == name).map(|o| o.ty.as_str())
    }

    pub fn goal_satisfied_by(&self, state: &SymbolicState) -> bool {
        state.satisfies(&self.goal)
    }
}

/// Positive preconditions hold and no negative precondition does.
pub fn applicable(state: &SymbolicState, action: &GroundAction) -> bool {
    action.precond_pos.iter().all(|a| state.contains(a))
        && action.precond_neg.iter().all(|a| !state.contains(a))
}

/// `(state \ del) ∪ add`.
pub fn apply(state: &SymbolicState, action: &GroundAction) -> Result<SymbolicState, PreconditionViolation> {
    if let Some(missing) = action.precond_pos.iter().find(|a| !state.contains(a)) {
        return Err(PreconditionViolation {
            action: action.label(),
            reason: format!("{missing} does not hold"),
        });
    }
    if let Some(present) = action.precond_neg.iter().find(|a| state.contains(a)) {
        return Err(PreconditionViolation {
            action: action.label(),
            reason: format!("{present} must not hold"),
        });
    }
    let mut next = state.clone();
    for d in &action.del {
        next.remove(d);
    }
    for a in &action.add {
        next.insert(a.clone());
    }
    Ok(next)
}

/// Applies a plan from `init`, returning every visited state including `init`.
pub fn simulate_plan(
    init: &SymbolicState,
    plan: &[GroundAction],
) -> Result<Vec<SymbolicState>, PreconditionViolation> {
    let mut states = vec![init.clone()];
    for action in plan {
        let next = apply(states.last().expect("non-empty"), action)?;
        states.push(next);
    }
    Ok(states)
}
