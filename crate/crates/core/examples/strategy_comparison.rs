//! Replicated comparison of trial-only analysis, random external draws and
//! matched external cohorts. Pass the replicate count as the first argument.

use atmle::simulation::{
    emit_metrics, emit_selection_markdown, run_experiment, ExperimentConfig, MetricsFormat,
};

pub fn main() -> Result<(), Box<dyn std::error::Error>> {
    let replications = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(20);
    run(replications)
}

pub fn run(replications: usize) -> Result<(), Box<dyn std::error::Error>> {
    let config = ExperimentConfig {
        replications,
        external_sizes: vec![500, 1000],
        ..Default::default()
    };
    let report = run_experiment(&config, None)?;
    print!("{}", emit_metrics(&report.rows, MetricsFormat::Markdown)?);
    println!();
    print!("{}", emit_selection_markdown(&report.selection));
    Ok(())
}
