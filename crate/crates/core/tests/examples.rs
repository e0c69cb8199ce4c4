//! Every example compiles into this test and runs to completion.

#[path = "../examples/estimate_atmle.rs"]
mod estimate_atmle;
#[path = "../examples/matching_design.rs"]
mod matching_design;
#[path = "../examples/oracle_bias_ladder.rs"]
mod oracle_bias_ladder;
#[path = "../examples/remainder_diagnostics.rs"]
mod remainder_diagnostics;
#[path = "../examples/solvers.rs"]
mod solvers;
#[path = "../examples/strategy_comparison.rs"]
#[allow(dead_code)]
mod strategy_comparison;

#[test]
fn estimate_atmle_runs() {
    estimate_atmle::main().unwrap();
}

#[test]
fn matching_design_runs() {
    matching_design::main().unwrap();
}

#[test]
fn oracle_bias_ladder_runs() {
    oracle_bias_ladder::main().unwrap();
}

#[test]
fn remainder_diagnostics_runs() {
    remainder_diagnostics::main().unwrap();
}

#[test]
fn solvers_run() {
    solvers::main().unwrap();
}

#[test]
fn strategy_comparison_runs() {
    strategy_comparison::run(3).unwrap();
}
