//! Replicated comparison of external-data selection strategies.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{generate_pool, DgpConfig, N_SOURCES, TRUE_ATE};
use crate::cohort::{split_by_study, Cohort};
use crate::error::{Error, Result};
use crate::estimate::Estimate;
use crate::estimators::{estimate_atmle, estimate_tmle_rct, AtmleOptions};
use crate::matching::{
    fit_enrollment_score, match_propensity, match_trial_enrollment, refit_external_propensity,
    sample_random, trim_to_size, MatchResult, MatchSpec, TrimPolicy,
};
use crate::nuisance::{BasisSpec, LassoConfig, TreatmentTerms};
use crate::numeric::{mean, sample_var};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    RctOnly,
    Random,
    TesPsMatching,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::RctOnly => "rct_only",
            Strategy::Random => "random",
            Strategy::TesPsMatching => "tes_ps_matching",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rct_only" => Some(Strategy::RctOnly),
            "random" => Some(Strategy::Random),
            "tes_ps_matching" => Some(Strategy::TesPsMatching),
            _ => None,
        }
    }

    fn uses_externals(self) -> bool {
        self != Strategy::RctOnly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Pool layout; its `seed` is replaced by a per-replicate seed.
    pub dgp: DgpConfig,
    pub replications: usize,
    pub external_sizes: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub k: usize,
    pub m: usize,
    pub trim_policy: TrimPolicy,
    pub estimator: AtmleOptions,
    /// Outcome basis of the trial-only estimator.
    pub trial_basis: BasisSpec,
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dgp: DgpConfig::default(),
            replications: 500,
            external_sizes: (5..=10).map(|k| k * 100).collect(),
            strategies: vec![Strategy::RctOnly, Strategy::Random, Strategy::TesPsMatching],
            k: 30,
            m: 1,
            trim_policy: TrimPolicy::BestDistance,
            estimator: AtmleOptions::default(),
            trial_basis: BasisSpec::main_terms().with_treatment(TreatmentTerms::Interacted),
            master_seed: 20240101,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.replications < 2 {
            return Err(Error::Config("replications must be at least 2".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("strategies must not be empty".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.strategies.iter().any(|s| s.uses_externals()) && self.external_sizes.is_empty() {
            return Err(Error::Config("external_sizes must not be empty".into()));
        }
        if !(self.estimator.alpha > 0.0 && self.estimator.alpha < 1.0) {
            return Err(Error::Config("alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// `(strategy, external_n)` cells in report order; trial-only has
    /// `external_n = 0`.
    pub fn cells(&self) -> Vec<(Strategy, usize)> {
        let mut strategies = self.strategies.clone();
        strategies.sort();
        strategies.dedup();
        let mut out = Vec::new();
        for s in strategies {
            if s.uses_externals() {
                out.extend(self.external_sizes.iter().map(|&n| (s, n)));
            } else {
                out.push((s, 0));
            }
        }
        out
    }
}

/// Result for one `(strategy, external_n)` cell of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellOutcome {
    pub strategy: Strategy,
    pub external_n: usize,
    /// Estimate without influence values, or the failure message.
    pub estimate: std::result::Result<Estimate, String>,
    /// Selected external rows per source (sources 1 to 5).
    pub source_counts: Option<[usize; N_SOURCES]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub cells: Vec<CellOutcome>,
}

fn strip(mut e: Estimate) -> Estimate {
    e.eic = Vec::new();
    e
}

fn source_counts(cohort: &Cohort, external: &[usize]) -> [usize; N_SOURCES] {
    let mut c = [0; N_SOURCES];
    for &i in external {
        if let Some(j) = cohort.rows()[i].source {
            if (1..=N_SOURCES as u32).contains(&j) {
                c[j as usize - 1] += 1;
            }
        }
    }
    c
}

fn analysis_cohort(cohort: &Cohort, rct: &[usize], external: &[usize]) -> Cohort {
    let rows: Vec<usize> = rct.iter().chain(external).copied().collect();
    cohort.subset(&rows)
}

fn stage_match(
    pool: &Cohort,
    cfg: &ExperimentConfig,
    score_basis: &BasisSpec,
) -> Result<MatchResult> {
    let spec = MatchSpec {
        k: cfg.k,
        m: cfg.m,
        ..Default::default()
    };
    let q_hat = fit_enrollment_score(pool, score_basis)?;
    let stage1 = match_trial_enrollment(pool, &q_hat, &spec)?;
    if cfg.m == 0 {
        return Ok(stage1);
    }
    let e_hat = refit_external_propensity(pool, &stage1.selected_external)?;
    match_propensity(pool, &stage1, &e_hat, cfg.m)
}

/// One replicate: a fresh pool from a seed derived from
/// `(master_seed, index)`, then every cell of the grid. Matching runs once
/// and is trimmed to each external size.
pub fn run_replicate(cfg: &ExperimentConfig, index: usize) -> Result<ReplicateOutcome> {
    let seed = derive_seed(cfg.master_seed, &[index as u64]);
    let dgp = DgpConfig {
        seed: derive_seed(seed, &[1]),
        ..cfg.dgp.clone()
    };
    let pool = generate_pool(&dgp)?;
    let (rct, ext) = split_by_study(&pool);
    let lasso_seed = derive_seed(seed, &[3]);
    let options = cfg.estimator.clone().with_seed(lasso_seed);
    let alpha = options.alpha;

    let mut matched: Option<std::result::Result<MatchResult, String>> = None;
    let mut cells = Vec::new();
    for (strategy, n) in cfg.cells() {
        let (estimate, counts) = match strategy {
            Strategy::RctOnly => {
                let trial = pool.subset(&rct);
                let lasso = LassoConfig {
                    seed: lasso_seed,
                    ..options.lasso.clone()
                };
                (
                    estimate_tmle_rct(&trial, &cfg.trial_basis, &lasso, alpha)
                        .map_err(|e| e.to_string()),
                    None,
                )
            }
            Strategy::Random => match sample_random(&ext, n, derive_seed(seed, &[2, n as u64])) {
                Ok(picked) => {
                    let cohort = analysis_cohort(&pool, &rct, &picked);
                    let est = estimate_atmle(&cohort, &options).map(|r| r.combined);
                    (
                        est.map_err(|e| e.to_string()),
                        Some(source_counts(&pool, &picked)),
                    )
                }
                Err(e) => (Err(e.to_string()), None),
            },
            Strategy::TesPsMatching => {
                let m = matched.get_or_insert_with(|| {
                    stage_match(&pool, cfg, &options.nuisance.score_basis)
                        .map_err(|e| e.to_string())
                });
                match m {
                    Ok(m) => {
                        let policy = match cfg.trim_policy {
                            TrimPolicy::Random { seed: s } => TrimPolicy::Random {
                                seed: derive_seed(s, &[index as u64, n as u64]),
                            },
                            p => p,
                        };
                        match trim_to_size(&pool, m, n, policy) {
                            Ok(t) => {
                                let cohort = analysis_cohort(&pool, &rct, &t.selected_external);
                                let est = estimate_atmle(&cohort, &options).map(|r| r.combined);
                                (
                                    est.map_err(|e| e.to_string()),
                                    Some(source_counts(&pool, &t.selected_external)),
                                )
                            }
                            Err(e) => (Err(e.to_string()), None),
                        }
                    }
                    Err(e) => (Err(e.clone()), None),
                }
            }
        };
        cells.push(CellOutcome {
            strategy,
            external_n: n,
            estimate: estimate.map(strip),
            source_counts: counts,
        });
    }
    Ok(ReplicateOutcome { index, cells })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub strategy: Strategy,
    pub external_n: usize,
    pub abs_bias: f64,
    pub variance: f64,
    pub mean_ci_width: f64,
    pub coverage: f64,
    pub power: f64,
    pub n_replications: usize,
    /// Replicates excluded because the cell failed.
    pub n_failed: usize,
}

/// Mean selected count per source, and how often source 1 contributed
/// strictly more rows than source 5.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionSummary {
    pub strategy: Strategy,
    pub external_n: usize,
    pub mean_counts: [f64; N_SOURCES],
    pub frac_first_exceeds_last: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub rows: Vec<MetricsRow>,
    pub selection: Vec<SelectionSummary>,
    pub replicates: Vec<ReplicateOutcome>,
}

/// Run all replicates on `workers` threads (all cores when `None`) and
/// aggregate in replicate order, so output does not depend on the thread
/// count.
pub fn run_experiment(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<ReplicateOutcome>> = pool.install(|| {
        (0..cfg.replications)
            .into_par_iter()
            .map(|i| run_replicate(cfg, i))
            .collect()
    });
    let mut replicates = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        replicates.push(o?);
    }
    Ok(aggregate(cfg, replicates))
}

pub fn aggregate(cfg: &ExperimentConfig, replicates: Vec<ReplicateOutcome>) -> ExperimentReport {
    let alpha = cfg.estimator.alpha;
    let mut rows = Vec::new();
    let mut selection = Vec::new();
    for (strategy, n) in cfg.cells() {
        let cells: Vec<&CellOutcome> = replicates
            .iter()
            .filter_map(|r| {
                r.cells
                    .iter()
                    .find(|c| c.strategy == strategy && c.external_n == n)
            })
            .collect();
        let ok: Vec<&Estimate> = cells
            .iter()
            .filter_map(|c| c.estimate.as_ref().ok())
            .collect();
        let failed = cells.len() - ok.len();
        let points: Vec<f64> = ok.iter().map(|e| e.point).collect();
        let frac = |f: &dyn Fn(&Estimate) -> bool| {
            if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().filter(|e| f(e)).count() as f64 / ok.len() as f64
            }
        };
        rows.push(MetricsRow {
            strategy,
            external_n: n,
            abs_bias: (mean(&points) - TRUE_ATE).abs(),
            variance: if points.len() > 1 {
                sample_var(&points)
            } else {
                f64::NAN
            },
            mean_ci_width: mean(&ok.iter().map(|e| e.ci_width()).collect::<Vec<_>>()),
            coverage: frac(&|e| e.covers(TRUE_ATE)),
            power: frac(&|e| e.rejects_zero(alpha)),
            n_replications: ok.len(),
            n_failed: failed,
        });
        let counts: Vec<[usize; N_SOURCES]> =
            cells.iter().filter_map(|c| c.source_counts).collect();
        if !counts.is_empty() {
            let mut mean_counts = [0.0; N_SOURCES];
            for c in &counts {
                for j in 0..N_SOURCES {
                    mean_counts[j] += c[j] as f64 / counts.len() as f64;
                }
            }
            let exceeds = counts.iter().filter(|c| c[0] > c[N_SOURCES - 1]).count();
            selection.push(SelectionSummary {
                strategy,
                external_n: n,
                mean_counts,
                frac_first_exceeds_last: exceeds as f64 / counts.len() as f64,
            });
        }
    }
    ExperimentReport {
        rows,
        selection,
        replicates,
    }
}
