//! Oracle bias of the projection estimand and a misspecification ladder.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::mc::{chunked_mean, draw_covariates, McConfig, McValue};
use super::remainder::projected_pair;
use super::truth::{logistic_score, standard_normal_sampler, ArmFn, TruthSpec};
use super::working::enrollment_weight;
use crate::error::{Error, Result};
use crate::nuisance::{BasisSpec, TreatmentTerms};
use crate::simulation::trial_outcome_mean;

/// Minimum Monte Carlo size for oracle-bias evaluation.
pub const MIN_ORACLE_DRAWS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleBias {
    /// Projection estimand minus the true pooled ATE.
    pub value: McValue,
    /// `E[τ_A,β0 - τ_A0]`.
    pub pooled_part: f64,
    /// Projection minus truth for the bias estimand.
    pub bias_part: f64,
    /// Weighted R² of the enrollment-effect projection, adjusted for the
    /// number of working columns.
    pub adjusted_r2: f64,
    /// `E Σ_a g0(a|W) Π0(1-Π0)(W,a) (τ_S,β0 - τ_S0)²(W,a)`.
    pub weighted_mse: f64,
}

/// Oracle bias `Ψ_β0 - Ψ0` for the given pooled and bias working bases.
pub fn oracle_bias_mc(
    truth: &TruthSpec,
    pooled: &BasisSpec,
    bias: &BasisSpec,
    mc: &McConfig,
) -> Result<OracleBias> {
    mc.require(MIN_ORACLE_DRAWS)?;
    let draws = draw_covariates(truth, mc);
    let (tau_a, tau_s) = projected_pair(truth, pooled, bias, &draws, mc.chunk)?;

    let mut pooled_terms = Vec::with_capacity(draws.len());
    let mut bias_terms = Vec::with_capacity(draws.len());
    let mut sq_err = Vec::with_capacity(draws.len());
    let mut weights = Vec::with_capacity(2 * draws.len());
    let mut targets = Vec::with_capacity(2 * draws.len());
    for w in &draws {
        pooled_terms.push(tau_a.predict(w, 0.0) - (truth.tau_a0)(w));
        let mut b = 0.0;
        let mut e = 0.0;
        for (a, sign) in [(0.0, 1.0), (1.0, -1.0)] {
            let delta = tau_s.predict(w, a) - (truth.tau_s0)(w, a);
            let p = truth.pi0(w, a as u8);
            b += sign * (1.0 - p) * delta;
            let wt = enrollment_weight(truth, w, a);
            e += wt * delta * delta;
            weights.push(wt);
            targets.push((truth.tau_s0)(w, a));
        }
        bias_terms.push(b);
        sq_err.push(e);
    }
    let contributions: Vec<f64> = pooled_terms
        .iter()
        .zip(&bias_terms)
        .map(|(p, b)| p - b)
        .collect();

    let weighted_mse = chunked_mean(&sq_err, mc.chunk);
    let wsum: f64 = weights.iter().sum();
    let tbar = weights
        .iter()
        .zip(&targets)
        .map(|(w, t)| w * t)
        .sum::<f64>()
        / wsum;
    let sst = weights
        .iter()
        .zip(&targets)
        .map(|(w, t)| w * (t - tbar).powi(2))
        .sum::<f64>()
        / draws.len() as f64;
    let r2 = if sst > 0.0 {
        1.0 - weighted_mse / sst
    } else {
        1.0
    };
    let n = targets.len() as f64;
    let k = tau_s.columns.len() as f64;
    let adjusted_r2 = 1.0 - (1.0 - r2) * (n - 1.0) / (n - k).max(1.0);

    Ok(OracleBias {
        value: McValue::from_contributions(&contributions, mc.chunk),
        pooled_part: chunked_mean(&pooled_terms, mc.chunk),
        bias_part: chunked_mean(&bias_terms, mc.chunk),
        adjusted_r2,
        weighted_mse,
    })
}

/// How the ladder truth departs from its working model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LadderKind {
    /// Treated-arm enrollment effect depends on `W3`, which the bias basis
    /// omits.
    Unobserved,
    /// Treated-arm enrollment effect has a `W1² - 1` term outside the
    /// main-terms basis.
    Misspecified,
    /// Both departures, `W3` omitted.
    Both,
}

impl LadderKind {
    pub const ALL: [LadderKind; 3] = [
        LadderKind::Unobserved,
        LadderKind::Misspecified,
        LadderKind::Both,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LadderKind::Unobserved => "unobserved",
            LadderKind::Misspecified => "misspecified",
            LadderKind::Both => "both",
        }
    }
}

/// Truth and working bases for one ladder rung.
///
/// Covariates are standard normal, the trial enrollment score is
/// `expit(-0.5 + 0.4 W1 - 0.3 W3)`, and external patients are treated with
/// probability one half, as in the trial. The enrollment effect is
/// `-(0.3 + 0.2 W1 + 0.15 A + 0.1 A W2) - weight · A · h(W)`.
pub fn ladder_truth(kind: LadderKind, weight: f64) -> Result<(TruthSpec, BasisSpec, BasisSpec)> {
    let h: fn(&[f64]) -> f64 = match kind {
        LadderKind::Unobserved => |w| w[2],
        LadderKind::Misspecified => |w| w[0] * w[0] - 1.0,
        LadderKind::Both => |w| w[2] + w[0] * w[0] - 1.0,
    };
    let tau_s0: ArmFn = Arc::new(move |w: &[f64], a: f64| {
        -(0.3 + 0.2 * w[0] + 0.15 * a + 0.1 * a * w[1]) - weight * a * h(w)
    });
    let truth = TruthSpec::from_parts(
        logistic_score(vec![-0.5, 0.4, 0.0, -0.3]),
        Arc::new(|_| 0.5),
        Arc::new(trial_outcome_mean),
        tau_s0,
        standard_normal_sampler(3),
        0.5,
    )?;
    let pooled = BasisSpec::main_terms();
    let bias = match kind {
        LadderKind::Misspecified => BasisSpec::main_terms(),
        _ => BasisSpec::main_terms().with_covariates(vec![0, 1]),
    }
    .with_treatment(TreatmentTerms::Interacted);
    Ok((truth, pooled, bias))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderRow {
    pub kind: LadderKind,
    pub weight: f64,
    pub adjusted_r2: f64,
    pub weighted_mse: f64,
    pub oracle_bias: f64,
    pub se: f64,
}

/// Default rung weights.
pub const LADDER_WEIGHTS: [f64; 8] = [0.0, 0.02, 0.04, 0.06, 0.08, 0.10, 0.12, 0.14];

pub fn misspecification_ladder(
    kind: LadderKind,
    weights: &[f64],
    mc: &McConfig,
) -> Result<Vec<LadderRow>> {
    weights
        .iter()
        .map(|&weight| {
            let (truth, pooled, bias) = ladder_truth(kind, weight)?;
            let ob = oracle_bias_mc(&truth, &pooled, &bias, mc)?;
            Ok(LadderRow {
                kind,
                weight,
                adjusted_r2: ob.adjusted_r2,
                weighted_mse: ob.weighted_mse,
                oracle_bias: ob.value.estimate,
                se: ob.value.se,
            })
        })
        .collect()
}

/// Least-squares slope of `ln|value|` on `ln eps`.
pub fn loglog_slope(eps: &[f64], values: &[f64]) -> Result<f64> {
    if eps.len() != values.len() || eps.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "log-log slope needs two or more matched points, got {} and {}",
            eps.len(),
            values.len()
        )));
    }
    if eps
        .iter()
        .chain(values)
        .any(|v| *v == 0.0 || !v.is_finite())
    {
        return Err(Error::InvalidInput(
            "log-log slope needs finite nonzero values".into(),
        ));
    }
    let x: Vec<f64> = eps.iter().map(|e| e.abs().ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.abs().ln()).collect();
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}
