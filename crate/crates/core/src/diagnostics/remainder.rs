//! Exact second-order remainders of the pooled-ATE and bias projection
//! estimands, evaluated by Monte Carlo over the true covariate law.
//!
//! The candidate `P` shares the covariate law (and, for the bias
//! projection, the law of `A` given `W`) with the truth; only its
//! conditional nuisances differ. The truth enters through its projections
//! onto the candidate's working columns.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::mc::{draw_covariates, McConfig, McValue};
use super::truth::{ArmFn, CovariateFn, TruthSpec};
use super::working::{
    arm_prob, fit_basis, population_information, project_tau_a, project_tau_s, WorkingFunction,
};
use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_bias_projection, estimate_pooled_projection, AtmleOptions, ProjectionFit,
};
use crate::nuisance::{BasisSpec, NuisanceBundle, OutcomeModel, TreatmentTerms};
use crate::numeric::PROB_CLIP;

/// Minimum Monte Carlo size for remainder evaluation.
pub const MIN_REMAINDER_DRAWS: usize = 10_000;

/// The nuisances of a candidate distribution `P`.
#[derive(Clone)]
pub struct Candidate {
    /// `g_P(1 | W)`.
    pub g: CovariateFn,
    /// `Π_P(1 | W, a)`.
    pub pi: ArmFn,
    pub theta: CovariateFn,
    /// `Q̄_P(W, a)`.
    pub qbar: ArmFn,
    /// Working-model CATE, a function of `W` only.
    pub tau_a: WorkingFunction,
    /// Working-model enrollment effect `τ_S(W, a)`.
    pub tau_s: WorkingFunction,
}

impl std::fmt::Debug for Candidate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Candidate")
            .field("tau_a", &self.tau_a)
            .field("tau_s", &self.tau_s)
            .finish_non_exhaustive()
    }
}

impl Candidate {
    /// True scores and outcome regressions with the given working functions.
    pub fn at_truth(truth: &TruthSpec, tau_a: WorkingFunction, tau_s: WorkingFunction) -> Self {
        let (t1, t2) = (truth.clone(), truth.clone());
        Self {
            g: Arc::new(move |w: &[f64]| t1.g0(w)),
            pi: Arc::new(move |w: &[f64], a: f64| t2.pi0(w, a as u8)),
            theta: truth.theta0.clone(),
            qbar: truth.qbar0.clone(),
            tau_a,
            tau_s,
        }
    }

    /// The truth with its working functions at their population
    /// projections on the given bases (all columns), computed on the draws
    /// of `mc`.
    pub fn projected(
        truth: &TruthSpec,
        pooled: &BasisSpec,
        bias: &BasisSpec,
        mc: &McConfig,
    ) -> Result<Self> {
        let draws = draw_covariates(truth, mc);
        let (tau_a, tau_s) = projected_pair(truth, pooled, bias, &draws, mc.chunk)?;
        Ok(Self::at_truth(truth, tau_a, tau_s))
    }

    /// Nuisances of a fitted A-TMLE: the bundle's composed scores and
    /// outcome regressions with both fitted working models.
    pub fn from_estimate(
        bundle: &NuisanceBundle,
        pooled: &ProjectionFit,
        bias: &ProjectionFit,
    ) -> Self {
        let b = Arc::new(bundle.clone());
        let (b1, b2, b3, b4) = (b.clone(), b.clone(), b.clone(), b);
        let tau_a = WorkingFunction {
            basis: pooled.basis.clone(),
            beta: pooled.fit.beta.clone(),
            columns: pooled.fit.selected.clone(),
        };
        let tau_a_fn = tau_a.clone();
        Self {
            g: Arc::new(move |w: &[f64]| b1.g(w)),
            pi: Arc::new(move |w: &[f64], a: f64| b2.pi(w, a as u8).unwrap_or(f64::NAN)),
            theta: Arc::new(move |w: &[f64]| b3.theta(w)),
            qbar: Arc::new(move |w: &[f64], a: f64| {
                b4.qbar(w, a)
                    .unwrap_or_else(|| b4.theta(w) + (a - b4.g(w)) * tau_a_fn.predict(w, 0.0))
            }),
            tau_a,
            tau_s: WorkingFunction {
                basis: bias.basis.clone(),
                beta: bias.fit.beta.clone(),
                columns: bias.fit.selected.clone(),
            },
        }
    }

    /// Run both projections of an A-TMLE on `cohort` with the given
    /// nuisances and wrap the result.
    pub fn fit(cohort: &Cohort, bundle: NuisanceBundle, options: &AtmleOptions) -> Result<Self> {
        let (_, pooled) = estimate_pooled_projection(
            cohort,
            &bundle,
            &options.cate_basis,
            &options.lasso,
            options.alpha,
        )?;
        let bundle = bundle.with_cate(OutcomeModel::Linear {
            basis: pooled.basis.clone(),
            beta: pooled.fit.beta.clone(),
        });
        let (_, bias) = estimate_bias_projection(
            cohort,
            &bundle,
            &options.bias_basis,
            &options.lasso,
            options.alpha,
        )?;
        Ok(Self::from_estimate(&bundle, &pooled, &bias))
    }

    /// Shift `g_P` by `eps`.
    pub fn with_g_shift(mut self, eps: f64) -> Self {
        let g = self.g.clone();
        self.g = Arc::new(move |w: &[f64]| g(w) + eps);
        self
    }

    /// Shift `Π_P(1 | W, a)` by `eps` in both arms.
    pub fn with_pi_shift(mut self, eps: f64) -> Self {
        let pi = self.pi.clone();
        self.pi = Arc::new(move |w: &[f64], a: f64| pi(w, a) + eps);
        self
    }
}

/// Population projections of the true CATE and enrollment effect on the
/// given bases. The pooled basis never carries treatment terms.
pub fn projected_pair(
    truth: &TruthSpec,
    pooled: &BasisSpec,
    bias: &BasisSpec,
    draws: &[Vec<f64>],
    chunk: usize,
) -> Result<(WorkingFunction, WorkingFunction)> {
    let pooled = pooled.clone().with_treatment(TreatmentTerms::Absent);
    let tau_a = project_tau_a(
        truth,
        &WorkingFunction::zero(fit_basis(&pooled, draws)),
        draws,
        chunk,
    )?;
    let tau_s = project_tau_s(
        truth,
        &WorkingFunction::zero(fit_basis(bias, draws)),
        draws,
        chunk,
    )?;
    Ok((tau_a, tau_s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemainderReport {
    pub value: McValue,
    /// Draws where `g_P` fell outside the clipping bounds; ratio
    /// denominators there use the clipped value.
    pub clipped_draws: usize,
    /// Condition number of the candidate's working-model information.
    pub condition: f64,
}

fn clipped(g: f64) -> (f64, bool) {
    if g < PROB_CLIP {
        (PROB_CLIP, true)
    } else if g > 1.0 - PROB_CLIP {
        (1.0 - PROB_CLIP, true)
    } else {
        (g, false)
    }
}

/// Exact remainder of the pooled-ATE projection estimand:
/// `cᵀ Ĩ_P⁻¹ E φ [(g_P-g0)(θ_P-θ0) + (g_P-g0)(1-g_P)(τ_P-τ0) -
/// (g_P-g0)² τ_P - (g_P-g0) g0 (τ_P-τ0)]`, with `c = E φ`,
/// `Ĩ_P = E g_P(1-g_P) φφᵀ` and `τ0` the truth projected on the candidate's
/// columns.
pub fn exact_remainder_pooled(
    truth: &TruthSpec,
    cand: &Candidate,
    mc: &McConfig,
) -> Result<RemainderReport> {
    mc.require(MIN_REMAINDER_DRAWS)?;
    let draws = draw_covariates(truth, mc);
    let f = &cand.tau_a;
    let k = f.columns.len();
    if k == 0 {
        return Ok(RemainderReport {
            value: McValue::from_contributions(&vec![0.0; draws.len()], mc.chunk),
            clipped_draws: 0,
            condition: 1.0,
        });
    }
    let tau0 = project_tau_a(truth, f, &draws, mc.chunk)?;
    let (_, inv, cond) = population_information(f, &draws, &[0.0], mc.chunk, |w, _| {
        let g = (cand.g)(w);
        g * (1.0 - g)
    })?;
    let c = super::mc::chunked_mean_vec(draws.len(), k, mc.chunk, |i, out| {
        let (mut buf, mut phi) = (Vec::new(), Vec::new());
        f.features(&draws[i], 0.0, &mut buf, &mut phi);
        out.copy_from_slice(&phi);
    });
    let v = inv * DVector::from_vec(c);

    let mut clipped_draws = 0;
    let contributions: Vec<f64> = draws
        .iter()
        .map(|w| {
            let (mut buf, mut phi) = (Vec::new(), Vec::new());
            f.features(w, 0.0, &mut buf, &mut phi);
            let lever: f64 = phi.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            let (gp, g0) = ((cand.g)(w), truth.g0(w));
            if clipped(gp).1 {
                clipped_draws += 1;
            }
            let dg = gp - g0;
            let tp = f.predict(w, 0.0);
            let dt = tp - tau0.predict(w, 0.0);
            let dtheta = (cand.theta)(w) - (truth.theta0)(w);
            lever * (dg * dtheta + dg * (1.0 - gp) * dt - dg * dg * tp - dg * g0 * dt)
        })
        .collect();
    Ok(RemainderReport {
        value: McValue::from_contributions(&contributions, mc.chunk),
        clipped_draws,
        condition: cond,
    })
}

/// Exact remainder of the bias projection estimand. With `π_a = Π_P(1|W,a)`,
/// `p_a = Π0(1|W,a)` and `τ0` the truth projected on the candidate's
/// columns, it is the mean of
///
/// ```text
///   (g_P-g0)/g_P τ_P(W,1)(π_1-p_1) - (g0-g_P)/(1-g_P) τ_P(W,0)(π_0-p_0)
/// + (τ_P-τ0)(W,0)(π_0-p_0) - (τ_P-τ0)(W,1)(π_1-p_1)
/// ```
///
/// plus `c_Sᵀ I_P⁻¹ E Σ_a g0(a|W) φ_a [(π_a-p_a)(Q̄_P-Q̄0)_a
/// + (π_a-p_a)(1-π_a)(τ_P-τ0)_a - (π_a-p_a)² τ_P,a - (π_a-p_a) p_a (τ_P-τ0)_a]`,
/// where `c_S = E[(1-π_0)φ(W,0) - (1-π_1)φ(W,1)]` and
/// `I_P = E Σ_a g0(a|W) π_a(1-π_a) φ_aφ_aᵀ`.
pub fn exact_remainder_bias(
    truth: &TruthSpec,
    cand: &Candidate,
    mc: &McConfig,
) -> Result<RemainderReport> {
    mc.require(MIN_REMAINDER_DRAWS)?;
    let draws = draw_covariates(truth, mc);
    let f = &cand.tau_s;
    let k = f.columns.len();
    let tau0 = project_tau_s(truth, f, &draws, mc.chunk)?;
    let (v, cond) = if k == 0 {
        (DVector::zeros(0), 1.0)
    } else {
        let (_, inv, cond) = population_information(f, &draws, &[0.0, 1.0], mc.chunk, |w, a| {
            let p = (cand.pi)(w, a);
            arm_prob(truth, w, a) * p * (1.0 - p)
        })?;
        let cs = super::mc::chunked_mean_vec(draws.len(), k, mc.chunk, |i, out| {
            let (mut buf, mut phi) = (Vec::new(), Vec::new());
            for (a, sign) in [(0.0, 1.0), (1.0, -1.0)] {
                f.features(&draws[i], a, &mut buf, &mut phi);
                let scale = sign * (1.0 - (cand.pi)(&draws[i], a));
                for p in 0..k {
                    out[p] += scale * phi[p];
                }
            }
        });
        (inv * DVector::from_vec(cs), cond)
    };

    let mut clipped_draws = 0;
    let mut contributions = Vec::with_capacity(draws.len());
    for w in &draws {
        let gp = (cand.g)(w);
        let (gden, was_clipped) = clipped(gp);
        if was_clipped {
            clipped_draws += 1;
        }
        let g0 = truth.g0(w);
        let mut total = 0.0;
        let mut lever_sum = 0.0;
        let (mut buf, mut phi) = (Vec::new(), Vec::new());
        for a in [0.0, 1.0] {
            let (pa, p0) = ((cand.pi)(w, a), truth.pi0(w, a as u8));
            if p0.is_nan() || pa.is_nan() {
                return Err(Error::InvalidInput(
                    "enrollment probability undefined on a draw".into(),
                ));
            }
            let dp = pa - p0;
            let tp = f.predict(w, a);
            let dt = tp - tau0.predict(w, a);
            if a == 1.0 {
                total += (gp - g0) / gden * tp * dp - dt * dp;
            } else {
                total += -(g0 - gp) / (1.0 - gden) * tp * dp + dt * dp;
            }
            if k > 0 {
                f.features(w, a, &mut buf, &mut phi);
                let lever: f64 = phi.iter().zip(v.iter()).map(|(x, y)| x * y).sum();
                let dq = (cand.qbar)(w, a) - (truth.qbar0)(w, a);
                let inner = dp * dq + dp * (1.0 - pa) * dt - dp * dp * tp - dp * p0 * dt;
                lever_sum += arm_prob(truth, w, a) * lever * inner;
            }
        }
        contributions.push(total + lever_sum);
    }
    Ok(RemainderReport {
        value: McValue::from_contributions(&contributions, mc.chunk),
        clipped_draws,
        condition: cond,
    })
}
