mod common;

use kdtamp_core::advisor::HeuristicAdvisor;
use kdtamp_core::bench::{DomainKind, InstanceSpec};
use kdtamp_core::hybrid::replay;

#[test]
fn small_instances_plan_and_replay() {
    for (domain, n, seeds) in [(DomainKind::Blocksworld, 3, 0..3), (DomainKind::Kitchen, 2, 0..2)] {
        for seed in seeds {
            let spec = InstanceSpec { domain, n, seed };
            let (ok, file) = common::plan_instance(spec, &mut HeuristicAdvisor).unwrap();
            assert!(ok, "{spec:?}");
            let report = replay(&file).unwrap();
            assert!(report.ok(), "{spec:?}: {report:?}");
            assert_eq!(report.executed, file.steps.len());
            common::plan_trajectories_valid(&file).unwrap();
        }
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    common::runs_are_deterministic().unwrap();
}

#[test]
fn topk_agrees_with_enumeration() {
    common::topk_matches_brute_force().unwrap();
}
