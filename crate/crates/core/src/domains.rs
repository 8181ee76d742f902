//! Bundled benchmark domains.

use crate::pddl::{parse_domain, DomainDef};

pub const BLOCKSWORLD: &str = include_str!("../domains/blocksworld.pddl");
pub const KITCHEN: &str = include_str!("../domains/kitchen.pddl");

pub fn blocksworld() -> DomainDef {
    parse_domain(BLOCKSWORLD).expect("bundled blocksworld domain parses")
}

pub fn kitchen() -> DomainDef {
    parse_domain(KITCHEN).expect("bundled kitchen domain parses")
}
