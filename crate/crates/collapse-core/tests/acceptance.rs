//! The acceptance gate: runs every verification criterion at its pinned
//! tolerance and prints one pass/fail line per criterion. Artifacts (CSVs,
//! sidecars, arbitration reports) land under the cargo target directory.

use collapse_core::acceptance::{run_criterion, SuiteContext};

fn ctx() -> SuiteContext {
    let out = std::env::temp_dir().join(format!("collapse-acceptance-{}", std::process::id()));
    SuiteContext::new(out, 0)
}

fn check(id: u8) {
    let report = run_criterion(id, &ctx()).expect("criterion must run");
    println!("{}", report.headline());
    for line in &report.details {
        println!("    {line}");
    }
    assert!(report.passed, "criterion {id} failed: {:?}", report.details);
}

#[test]
fn criterion_1_classical_theory_simulation_match() {
    check(1);
}

#[test]
fn criterion_2_strong_collapse_plateau() {
    check(2);
}

#[test]
fn criterion_3_gamma_infinity_reduction() {
    check(3);
}

#[test]
fn criterion_4_rp_match_and_double_descent() {
    check(4);
}

#[test]
fn criterion_5_iterative_mixing_exactness() {
    check(5);
}

#[test]
fn criterion_6_mixing_weight_arbitration() {
    check(6);
}

#[test]
fn criterion_7_detequiv_oracle_equivalence() {
    check(7);
}

#[test]
fn criterion_8_fixed_point_integrity() {
    check(8);
}

#[test]
fn criterion_9_determinism() {
    check(9);
}
