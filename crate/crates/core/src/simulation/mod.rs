//! Simulated trial-plus-external pools and the replicated strategy
//! comparison built on them.

mod dgp;
mod experiment;
mod report;

pub use dgp::{
    external_bias, external_propensity, generate_pool, source_shift, trial_outcome_mean, DgpConfig,
    N_SOURCES, TRUE_ATE,
};
pub use experiment::{
    aggregate, run_experiment, run_replicate, CellOutcome, ExperimentConfig, ExperimentReport,
    MetricsRow, ReplicateOutcome, SelectionSummary, Strategy,
};
pub use report::{emit_metrics, emit_selection_markdown, parse_metrics_csv, MetricsFormat};
