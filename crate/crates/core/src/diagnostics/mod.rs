//! Monte Carlo checks of the estimators' robustness: exact remainders,
//! oracle bias of the projection estimand, and match balance.

mod mc;
mod oracle;
mod remainder;
mod truth;
mod working;

pub use crate::matching::{balance_report, BalanceReport};
pub use mc::{chunked_mean, draw_covariates, McConfig, McValue, DRAW_BLOCK};
pub use oracle::{
    ladder_truth, loglog_slope, misspecification_ladder, oracle_bias_mc, LadderKind, LadderRow,
    OracleBias, LADDER_WEIGHTS, MIN_ORACLE_DRAWS,
};
pub use remainder::{
    exact_remainder_bias, exact_remainder_pooled, projected_pair, Candidate, RemainderReport,
    MIN_REMAINDER_DRAWS,
};
pub use truth::{logistic_score, standard_normal_sampler, ArmFn, CovariateFn, Sampler, TruthSpec};
pub use working::{fit_basis, project_tau_a, project_tau_s, WorkingFunction};
