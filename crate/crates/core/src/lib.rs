//! Adaptive targeted estimation of average treatment effects when a
//! randomized trial is augmented with external real-world data.

// Negated comparisons such as `!(x > 0.0)` are used on purpose: they also
// reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod cohort;
pub mod diagnostics;
pub mod error;
pub mod estimate;
pub mod estimators;
pub mod matching;
pub mod nuisance;
pub mod numeric;
pub mod rng;
pub mod simulation;

pub use cohort::{validate_cohort, CellCounts, Cohort, Observation};
pub use error::{Error, Result};
pub use estimate::{wald_inference, Estimate};
