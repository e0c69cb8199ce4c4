//! Fitted nuisance functions for a pooled cohort.

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::basis::{Basis, BasisSpec};
use super::lasso::{fit_weighted_lasso, LassoConfig};
use super::logistic::fit_logistic;
use super::scores::{enrollment_prob, pooled_treatment_prob};
use crate::cohort::{split_by_study, Cohort};
use crate::error::{Error, Result};
use crate::numeric::{clip_prob, expit};
use crate::rng;

pub type ScoreFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type OutcomeFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// A probability model `W → [0, 1]`.
#[derive(Clone)]
pub enum ScoreModel {
    Constant(f64),
    Logistic {
        basis: Basis,
        beta: Vec<f64>,
    },
    /// Caller-supplied function, returned verbatim.
    Oracle(ScoreFn),
}

impl ScoreModel {
    pub fn predict(&self, w: &[f64]) -> f64 {
        match self {
            ScoreModel::Constant(p) => *p,
            ScoreModel::Logistic { basis, beta } => expit(basis.predict(beta, w, 0.0)),
            ScoreModel::Oracle(f) => f(w),
        }
    }

    pub fn oracle(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ScoreModel::Oracle(Arc::new(f))
    }

    /// Fit `label ~ φ(W)` by logistic regression on the given rows.
    pub fn fit(w: &[&[f64]], labels: &[f64], spec: &BasisSpec) -> Result<Self> {
        let basis = spec.fit(w);
        let x = basis.design(w, &[]);
        let fit = fit_logistic(&x, labels, None)?;
        Ok(ScoreModel::Logistic {
            basis,
            beta: fit.beta,
        })
    }
}

impl fmt::Debug for ScoreModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreModel::Constant(p) => write!(f, "Constant({p})"),
            ScoreModel::Logistic { beta, .. } => write!(f, "Logistic({beta:?})"),
            ScoreModel::Oracle(_) => write!(f, "Oracle"),
        }
    }
}

/// A real-valued regression `(W, a) → R`; treatment-free models ignore `a`.
#[derive(Clone)]
pub enum OutcomeModel {
    Linear { basis: Basis, beta: Vec<f64> },
    Oracle(OutcomeFn),
}

impl OutcomeModel {
    pub fn predict(&self, w: &[f64], a: f64) -> f64 {
        match self {
            OutcomeModel::Linear { basis, beta } => basis.predict(beta, w, a),
            OutcomeModel::Oracle(f) => f(w, a),
        }
    }

    pub fn oracle(f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        OutcomeModel::Oracle(Arc::new(f))
    }

    /// Lasso fit of `y ~ φ(W, A)` with the intercept unpenalized.
    pub fn fit(
        w: &[&[f64]],
        a: &[f64],
        y: &[f64],
        spec: &BasisSpec,
        lasso: &LassoConfig,
    ) -> Result<Self> {
        let basis = spec.fit(w);
        let x = basis.design(w, a);
        let cfg = LassoConfig {
            unpenalized: basis.intercept_index().into_iter().collect(),
            ..lasso.clone()
        };
        let fit = fit_weighted_lasso(&x, y, None, &cfg)?;
        Ok(OutcomeModel::Linear {
            basis,
            beta: fit.beta,
        })
    }
}

impl fmt::Debug for OutcomeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutcomeModel::Linear { beta, .. } => write!(f, "Linear({beta:?})"),
            OutcomeModel::Oracle(_) => write!(f, "Oracle"),
        }
    }
}

/// Lasso regression of `Y` on `φ(W)` over the pooled cohort, i.e. an
/// estimate of `θ(W) = E(Y | W)`.
pub fn fit_theta(cohort: &Cohort, basis: &BasisSpec, lasso: &LassoConfig) -> Result<OutcomeModel> {
    let w = cohort.covariates();
    OutcomeModel::fit(&w, &[], &cohort.outcomes(), basis, lasso)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NuisanceOptions {
    /// Basis for the logistic enrollment and external propensity models.
    pub score_basis: BasisSpec,
    /// Basis for `θ(W) = E(Y|W)`.
    pub theta_basis: BasisSpec,
    pub lasso: LassoConfig,
    /// Accept a cohort whose external rows are all controls (`ê ≡ 0`).
    pub external_controls_only: bool,
    /// Out-of-fold nuisance predictions for the cohort rows.
    pub cross_fit_folds: Option<usize>,
}

impl Default for NuisanceOptions {
    fn default() -> Self {
        Self {
            score_basis: BasisSpec::main_terms(),
            theta_basis: BasisSpec::main_terms(),
            lasso: LassoConfig::default(),
            external_controls_only: false,
            cross_fit_folds: None,
        }
    }
}

/// Per-row nuisance values on the cohort the bundle was fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct RowNuisance {
    pub q: Vec<f64>,
    pub e: Vec<f64>,
    /// Clipped `ĝ(1|W_i)`.
    pub g: Vec<f64>,
    /// `Π̂(1|W_i, 0)` and `Π̂(1|W_i, 1)`.
    pub pi: [Vec<f64>; 2],
    pub theta: Vec<f64>,
}

/// Fitted `q̂`, `ê`, `θ̂` with the composed `ĝ`, `Π̂`, and (after the
/// pooled projection) `Q̄̂(W,a) = θ̂(W) + (a - ĝ(1|W))·τ̂_A(W)`.
#[derive(Debug, Clone)]
pub struct NuisanceBundle {
    pub r: f64,
    pub q_model: ScoreModel,
    pub e_model: ScoreModel,
    pub theta_model: OutcomeModel,
    cate: Option<OutcomeModel>,
    rows: RowNuisance,
    /// Rows whose `ĝ` was truncated.
    pub clipped_g_rows: Vec<usize>,
}

/// `q̂` clipped; `ê` clipped unless structurally zero.
fn score_values(q_model: &ScoreModel, e_model: &ScoreModel, w: &[f64]) -> (f64, f64) {
    let q = clip_prob(q_model.predict(w));
    let e = match e_model {
        ScoreModel::Constant(v) if *v == 0.0 => 0.0,
        m => clip_prob(m.predict(w)),
    };
    (q, e)
}

impl NuisanceBundle {
    /// Assemble a bundle from given models, evaluating per-row values on
    /// `cohort`. Used directly for oracle scores.
    pub fn from_models(
        cohort: &Cohort,
        q_model: ScoreModel,
        e_model: ScoreModel,
        theta_model: OutcomeModel,
    ) -> Result<Self> {
        let n = cohort.len();
        let mut q = Vec::with_capacity(n);
        let mut e = Vec::with_capacity(n);
        let mut theta = Vec::with_capacity(n);
        for o in cohort.rows() {
            let (qi, ei) = score_values(&q_model, &e_model, &o.w);
            q.push(qi);
            e.push(ei);
            theta.push(theta_model.predict(&o.w, 0.0));
        }
        Self::from_values(
            cohort.randomization_prob(),
            q_model,
            e_model,
            theta_model,
            q,
            e,
            theta,
        )
    }

    fn from_values(
        r: f64,
        q_model: ScoreModel,
        e_model: ScoreModel,
        theta_model: OutcomeModel,
        q: Vec<f64>,
        e: Vec<f64>,
        theta: Vec<f64>,
    ) -> Result<Self> {
        let n = q.len();
        let mut g = Vec::with_capacity(n);
        let mut pi0 = Vec::with_capacity(n);
        let mut pi1 = Vec::with_capacity(n);
        let mut bad = Vec::new();
        let mut clipped = Vec::new();
        for i in 0..n {
            let raw = pooled_treatment_prob(q[i], e[i], r);
            let gi = clip_prob(raw);
            if gi != raw {
                clipped.push(i);
            }
            g.push(gi);
            match (
                enrollment_prob(q[i], e[i], r, 0),
                enrollment_prob(q[i], e[i], r, 1),
            ) {
                (Some(p0), Some(p1)) => {
                    pi0.push(p0);
                    pi1.push(p1);
                }
                _ => {
                    bad.push(i);
                    pi0.push(f64::NAN);
                    pi1.push(f64::NAN);
                }
            }
        }
        if !bad.is_empty() {
            return Err(Error::Positivity { rows: bad });
        }
        Ok(Self {
            r,
            q_model,
            e_model,
            theta_model,
            cate: None,
            rows: RowNuisance {
                q,
                e,
                g,
                pi: [pi0, pi1],
                theta,
            },
            clipped_g_rows: clipped,
        })
    }

    pub fn rows(&self) -> &RowNuisance {
        &self.rows
    }

    pub fn q(&self, w: &[f64]) -> f64 {
        score_values(&self.q_model, &self.e_model, w).0
    }

    pub fn e(&self, w: &[f64]) -> f64 {
        score_values(&self.q_model, &self.e_model, w).1
    }

    pub fn g(&self, w: &[f64]) -> f64 {
        let (q, e) = score_values(&self.q_model, &self.e_model, w);
        clip_prob(pooled_treatment_prob(q, e, self.r))
    }

    /// `Π̂(1|W,a)`.
    pub fn pi(&self, w: &[f64], a: u8) -> Option<f64> {
        let (q, e) = score_values(&self.q_model, &self.e_model, w);
        enrollment_prob(q, e, self.r, a)
    }

    pub fn theta(&self, w: &[f64]) -> f64 {
        self.theta_model.predict(w, 0.0)
    }

    pub fn cate(&self) -> Option<&OutcomeModel> {
        self.cate.as_ref()
    }

    /// Attach the fitted CATE working model; enables `qbar`.
    pub fn with_cate(mut self, cate: OutcomeModel) -> Self {
        self.cate = Some(cate);
        self
    }

    /// `Q̄̂(W,a)` via the semiparametric representation. `None` until a CATE
    /// model is attached.
    pub fn qbar(&self, w: &[f64], a: f64) -> Option<f64> {
        let tau = self.cate.as_ref()?.predict(w, 0.0);
        Some(self.theta(w) + (a - self.g(w)) * tau)
    }

    /// Per-row `Q̄̂(W_i, a)` using the cached row values.
    pub fn qbar_row(&self, i: usize, w: &[f64], a: f64) -> Option<f64> {
        let tau = self.cate.as_ref()?.predict(w, 0.0);
        Some(self.rows.theta[i] + (a - self.rows.g[i]) * tau)
    }

    /// Replace the enrollment mechanism so that `Π̂(1|W,a) ≡ 1`, i.e. the
    /// model asserts no external enrollment.
    pub fn force_trial_only_enrollment(mut self) -> Self {
        let n = self.rows.q.len();
        self.rows.pi = [vec![1.0; n], vec![1.0; n]];
        self
    }

    /// True when `Π̂(0|W_i,a) = 0` on every row and arm.
    pub fn no_external_enrollment(&self) -> bool {
        self.rows.pi.iter().all(|v| v.iter().all(|&p| p >= 1.0))
    }
}

fn fit_scores(
    cohort: &Cohort,
    rows: &[usize],
    options: &NuisanceOptions,
) -> Result<(ScoreModel, ScoreModel)> {
    let sub = cohort.subset(rows);
    let w = sub.covariates();
    let counts = sub.counts();
    if counts.rct() == 0 {
        return Err(Error::MissingStudyGroup("trial"));
    }
    if counts.external() == 0 {
        return Err(Error::MissingStudyGroup("external"));
    }
    let q_model = ScoreModel::fit(&w, &sub.study(), &options.score_basis)?;
    let (_, ext) = split_by_study(&sub);
    let e_model = if counts.external_treated == 0 {
        ScoreModel::Constant(0.0)
    } else if counts.external_control == 0 {
        ScoreModel::Constant(1.0)
    } else {
        let ew: Vec<&[f64]> = ext.iter().map(|&i| w[i]).collect();
        let ea: Vec<f64> = ext.iter().map(|&i| sub.rows()[i].a as f64).collect();
        ScoreModel::fit(&ew, &ea, &options.score_basis)?
    };
    Ok((q_model, e_model))
}

/// Fit `q̂` (logistic `S ~ φ(W)` on pooled rows), `ê` (logistic `A ~ φ(W)`
/// on external rows, or `≡ 0` without external treated rows) and `θ̂`, and
/// compose `ĝ` and `Π̂` row by row.
pub fn build_nuisance_bundle(cohort: &Cohort, options: &NuisanceOptions) -> Result<NuisanceBundle> {
    let counts = cohort.counts();
    if counts.external_treated == 0 && counts.external() > 0 && !options.external_controls_only {
        log::info!("no external treated rows; using ê ≡ 0");
    }
    let all: Vec<usize> = (0..cohort.len()).collect();
    let (q_model, e_model) = fit_scores(cohort, &all, options)?;
    let theta_model = fit_theta(cohort, &options.theta_basis, &options.lasso)?;

    match options.cross_fit_folds {
        None | Some(0) | Some(1) => {
            NuisanceBundle::from_models(cohort, q_model, e_model, theta_model)
        }
        Some(k) => {
            let n = cohort.len();
            let mut order = all.clone();
            order.shuffle(&mut rng::stream(options.lasso.seed, &[0xc405_5f17]));
            let mut fold = vec![0usize; n];
            for (rank, &i) in order.iter().enumerate() {
                fold[i] = rank % k;
            }
            let mut q = vec![0.0; n];
            let mut e = vec![0.0; n];
            let mut theta = vec![0.0; n];
            for f in 0..k {
                let train: Vec<usize> = (0..n).filter(|&i| fold[i] != f).collect();
                let (qm, em) = fit_scores(cohort, &train, options)?;
                let tm = fit_theta(&cohort.subset(&train), &options.theta_basis, &options.lasso)?;
                for i in (0..n).filter(|&i| fold[i] == f) {
                    let w = &cohort.rows()[i].w;
                    let (qi, ei) = score_values(&qm, &em, w);
                    q[i] = qi;
                    e[i] = ei;
                    theta[i] = tm.predict(w, 0.0);
                }
            }
            NuisanceBundle::from_values(
                cohort.randomization_prob(),
                q_model,
                e_model,
                theta_model,
                q,
                e,
                theta,
            )
        }
    }
}
