//! Treatment-effect estimators: the data-integration estimator that
//! subtracts an estimated external-data bias from a pooled effect, and
//! trial-only TMLE and AIPW baselines.

mod projection;

use serde::{Deserialize, Serialize};

use crate::cohort::{split_by_study, Cohort};
use crate::error::{Error, Result};
pub use crate::estimate::{wald_inference, Estimate};
use crate::nuisance::{
    build_nuisance_bundle, BasisSpec, LassoConfig, NuisanceBundle, NuisanceOptions, OutcomeModel,
};
use crate::numeric::PROB_CLIP;

pub use projection::{
    estimate_bias_projection, estimate_pooled_projection, ProjectionFit, INFO_JITTER, MAX_CONDITION,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AtmleOptions {
    pub nuisance: NuisanceOptions,
    /// Working basis `φ(W)` for the conditional treatment effect.
    pub cate_basis: BasisSpec,
    /// Working basis `φ(W, A)` for the conditional trial-enrollment effect.
    pub bias_basis: BasisSpec,
    pub lasso: LassoConfig,
    pub alpha: f64,
}

impl Default for AtmleOptions {
    fn default() -> Self {
        Self {
            nuisance: NuisanceOptions::default(),
            cate_basis: BasisSpec::main_terms(),
            bias_basis: BasisSpec::main_terms(),
            lasso: LassoConfig::default(),
            alpha: 0.05,
        }
    }
}

impl AtmleOptions {
    /// The same options with every lasso fold assignment drawn from `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.lasso.seed = seed;
        self.nuisance.lasso.seed = seed;
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AtmleDiagnostics {
    /// Rows whose `ĝ` was truncated.
    pub clipped_g_rows: usize,
    pub min_pi_trial: f64,
    pub max_pi_trial: f64,
    pub pooled_condition: f64,
    pub bias_condition: f64,
    pub pooled_selected: Vec<String>,
    pub bias_selected: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AtmleResult {
    pub pooled: Estimate,
    pub bias: Estimate,
    pub combined: Estimate,
    pub diagnostics: AtmleDiagnostics,
}

/// Fit the nuisance bundle and run [`estimate_atmle_with_bundle`].
pub fn estimate_atmle(cohort: &Cohort, options: &AtmleOptions) -> Result<AtmleResult> {
    cohort.require_both_groups()?;
    let bundle = build_nuisance_bundle(cohort, &options.nuisance)?;
    estimate_atmle_with_bundle(cohort, bundle, options)
}

/// Pooled projection, then the bias projection with
/// `Q̄̂ = θ̂ + (A - ĝ)τ̂_A`, then their difference with differenced influence
/// curves.
pub fn estimate_atmle_with_bundle(
    cohort: &Cohort,
    bundle: NuisanceBundle,
    options: &AtmleOptions,
) -> Result<AtmleResult> {
    let (pooled, pfit) = estimate_pooled_projection(
        cohort,
        &bundle,
        &options.cate_basis,
        &options.lasso,
        options.alpha,
    )?;
    let bundle = bundle.with_cate(OutcomeModel::Linear {
        basis: pfit.basis.clone(),
        beta: pfit.fit.beta.clone(),
    });
    let (bias, bfit) = estimate_bias_projection(
        cohort,
        &bundle,
        &options.bias_basis,
        &options.lasso,
        options.alpha,
    )?;
    let eic: Vec<f64> = pooled
        .eic
        .iter()
        .zip(&bias.eic)
        .map(|(p, b)| p - b)
        .collect();
    let combined = wald_inference(pooled.point - bias.point, eic, options.alpha);

    let pi = &bundle.rows().pi;
    let (lo, hi) = pi
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &p| {
            (l.min(p), h.max(p))
        });
    let names = |f: &ProjectionFit| {
        let cols = f.basis.column_names();
        f.fit.selected.iter().map(|&j| cols[j].clone()).collect()
    };
    let diagnostics = AtmleDiagnostics {
        clipped_g_rows: bundle.clipped_g_rows.len(),
        min_pi_trial: lo,
        max_pi_trial: hi,
        pooled_condition: pfit.condition,
        bias_condition: bfit.condition,
        pooled_selected: names(&pfit),
        bias_selected: names(&bfit),
    };
    Ok(AtmleResult {
        pooled,
        bias,
        combined,
        diagnostics,
    })
}

fn trial_rows(cohort: &Cohort) -> Result<Cohort> {
    let (rct, ext) = split_by_study(cohort);
    if rct.is_empty() {
        return Err(Error::MissingStudyGroup("trial"));
    }
    if !ext.is_empty() {
        log::info!(
            "ignoring {} external rows for the trial-only estimator",
            ext.len()
        );
    }
    let trial = cohort.subset(&rct);
    let c = trial.counts();
    if c.rct_treated == 0 || c.rct_control == 0 {
        return Err(Error::SingleArm("trial"));
    }
    Ok(trial)
}

/// Outcome regression `Y ~ φ(W, A)` by lasso, intercept unpenalized.
fn fit_outcome(cohort: &Cohort, basis: &BasisSpec, lasso: &LassoConfig) -> Result<OutcomeModel> {
    OutcomeModel::fit(
        &cohort.covariates(),
        &cohort.treatments(),
        &cohort.outcomes(),
        basis,
        lasso,
    )
}

/// Trial-only TMLE with the known randomization probability: plug-in
/// `mean[Q̄̂(W,1) - Q̄̂(W,0)]` plus the mean of the inverse-probability
/// weighted residual term. External rows, if any, are ignored.
pub fn estimate_tmle_rct(
    cohort: &Cohort,
    basis: &BasisSpec,
    lasso: &LassoConfig,
    alpha: f64,
) -> Result<Estimate> {
    let trial = trial_rows(cohort)?;
    let r = trial.randomization_prob();
    let qbar = fit_outcome(&trial, basis, lasso)?;
    let p = vec![r; trial.len()];
    aipw_from_parts(&trial, &|w, a| qbar.predict(w, a), &p, alpha)
}

/// Standard AIPW with a user-supplied outcome regression and per-row
/// propensities `P(A=1 | W_i)`.
pub fn estimate_aipw(
    cohort: &Cohort,
    qbar: &dyn Fn(&[f64], f64) -> f64,
    propensity: &[f64],
    alpha: f64,
) -> Result<Estimate> {
    if propensity.len() != cohort.len() {
        return Err(Error::InvalidInput(format!(
            "{} propensities for {} rows",
            propensity.len(),
            cohort.len()
        )));
    }
    let bad: Vec<usize> = propensity
        .iter()
        .enumerate()
        .filter(|(_, &p)| !(PROB_CLIP..=1.0 - PROB_CLIP).contains(&p))
        .map(|(i, _)| i)
        .collect();
    if !bad.is_empty() {
        return Err(Error::Positivity { rows: bad });
    }
    aipw_from_parts(cohort, qbar, propensity, alpha)
}

fn aipw_from_parts(
    cohort: &Cohort,
    qbar: &dyn Fn(&[f64], f64) -> f64,
    propensity: &[f64],
    alpha: f64,
) -> Result<Estimate> {
    let n = cohort.len();
    if n == 0 {
        return Err(Error::EmptyCohort);
    }
    let mut plug = Vec::with_capacity(n);
    let mut resid = Vec::with_capacity(n);
    for (o, &p) in cohort.rows().iter().zip(propensity) {
        let q1 = qbar(&o.w, 1.0);
        let q0 = qbar(&o.w, 0.0);
        let a = o.a as f64;
        let h = a / p - (1.0 - a) / (1.0 - p);
        plug.push(q1 - q0);
        resid.push(h * (o.y - qbar(&o.w, a)));
    }
    let point = plug.iter().zip(&resid).map(|(a, b)| a + b).sum::<f64>() / n as f64;
    let eic: Vec<f64> = plug
        .iter()
        .zip(&resid)
        .map(|(a, b)| a + b - point)
        .collect();
    Ok(wald_inference(point, eic, alpha))
}

/// AIPW with a lasso outcome regression on `φ(W, A)`. Propensities are the
/// known `r` for a trial-only cohort, otherwise a logistic fit of
/// `A ~ φ(W)` over all rows (clipped).
pub fn fit_aipw(
    cohort: &Cohort,
    basis: &BasisSpec,
    score_basis: &BasisSpec,
    lasso: &LassoConfig,
    alpha: f64,
) -> Result<Estimate> {
    let c = cohort.counts();
    if c.rct_treated + c.external_treated == 0 || c.rct_control + c.external_control == 0 {
        return Err(Error::SingleArm("cohort"));
    }
    let qbar = fit_outcome(cohort, basis, lasso)?;
    let propensity: Vec<f64> = if c.external() == 0 {
        vec![cohort.randomization_prob(); cohort.len()]
    } else {
        let w = cohort.covariates();
        let model = crate::nuisance::ScoreModel::fit(&w, &cohort.treatments(), score_basis)?;
        w.iter()
            .map(|wi| crate::numeric::clip_prob(model.predict(wi)))
            .collect()
    };
    estimate_aipw(cohort, &|w, a| qbar.predict(w, a), &propensity, alpha)
}
