//! Working-model projections: the pooled treatment effect and the
//! external-data bias, each fitted by R-loss and debiased with its
//! influence curve.

use nalgebra::{DMatrix, DVector};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::estimate::{wald_inference, Estimate};
use crate::nuisance::{
    fit_weighted_lasso, Basis, BasisSpec, CoefficientFit, LassoConfig, NuisanceBundle,
    TreatmentTerms,
};
use crate::numeric::inverse_spd;

/// Diagonal jitter added to working-model information matrices before
/// inversion.
pub const INFO_JITTER: f64 = 1e-10;
/// Condition number above which an information matrix is treated as
/// singular.
pub const MAX_CONDITION: f64 = 1e10;

/// A fitted working model with what its influence curve needs.
#[derive(Debug, Clone)]
pub struct ProjectionFit {
    pub basis: Basis,
    pub fit: CoefficientFit,
    /// Mean of `∂ψ/∂β_j` over the cohort, one entry per selected column.
    pub basis_means: Vec<f64>,
    /// Weighted information on the selected columns.
    pub information: DMatrix<f64>,
    pub condition: f64,
}

impl ProjectionFit {
    pub fn predict(&self, w: &[f64], a: f64) -> f64 {
        self.basis.predict(&self.fit.beta, w, a)
    }
}

/// Lasso of `pseudo` on `factor_i · φ(W_i, a_i)`, intercept unpenalized.
fn r_loss_fit(
    basis: &Basis,
    w: &[&[f64]],
    arms: &[f64],
    factor: &[f64],
    pseudo: &[f64],
    lasso: &LassoConfig,
) -> Result<CoefficientFit> {
    let mut x = basis.design(w, arms);
    for (i, f) in factor.iter().enumerate() {
        x.row_mut(i).scale_mut(*f);
    }
    let cfg = LassoConfig {
        unpenalized: basis.intercept_index().into_iter().collect(),
        ..lasso.clone()
    };
    fit_weighted_lasso(&x, pseudo, None, &cfg)
}

/// `mean_i weight_i φ_S(i) φ_S(i)ᵀ` over the selected columns `S`, with its
/// inverse.
fn information(
    basis: &Basis,
    w: &[&[f64]],
    arms: &[f64],
    weight: &[f64],
    selected: &[usize],
) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    let k = selected.len();
    let n = w.len();
    let mut info = DMatrix::zeros(k, k);
    if k == 0 {
        return Ok((info.clone(), info, 1.0));
    }
    let mut buf = Vec::new();
    for i in 0..n {
        basis.eval_into(w[i], arms.get(i).copied().unwrap_or(0.0), &mut buf);
        for (p, &jp) in selected.iter().enumerate() {
            let v = weight[i] * buf[jp];
            for (q, &jq) in selected.iter().enumerate().take(p + 1) {
                info[(p, q)] += v * buf[jq];
            }
        }
    }
    for p in 0..k {
        for q in 0..p {
            info[(q, p)] = info[(p, q)];
        }
    }
    info /= n as f64;
    let (inv, cond) = inverse_spd(&info, INFO_JITTER);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::SingularInformation { condition: cond });
    }
    Ok((info, inv, cond))
}

/// `D_β,i · c` summed over selected columns, where
/// `D_β,i = I⁻¹ factor_i φ_S(W_i, a_i) resid_i`.
#[allow(clippy::too_many_arguments)]
fn beta_contribution(
    basis: &Basis,
    w: &[&[f64]],
    arms: &[f64],
    factor: &[f64],
    resid: &[f64],
    selected: &[usize],
    inv: &DMatrix<f64>,
    grad: &[f64],
) -> Vec<f64> {
    let n = w.len();
    if selected.is_empty() {
        return vec![0.0; n];
    }
    // c = I⁻¹ grad, so D_β · grad = factor · resid · φ_Sᵀ c
    let c = inv * DVector::from_column_slice(grad);
    let mut buf = Vec::new();
    (0..n)
        .map(|i| {
            basis.eval_into(w[i], arms.get(i).copied().unwrap_or(0.0), &mut buf);
            let proj: f64 = selected
                .iter()
                .enumerate()
                .map(|(k, &j)| buf[j] * c[k])
                .sum();
            factor[i] * resid[i] * proj
        })
        .collect()
}

/// Pooled-ATE projection: fit `τ_A` by R-loss on `(A - ĝ)φ(W)` against
/// `Y - θ̂(W)`, take the mean of `τ̂_A(W)`, and add the mean of the
/// working-coefficient influence term.
pub fn estimate_pooled_projection(
    cohort: &Cohort,
    bundle: &NuisanceBundle,
    basis_spec: &BasisSpec,
    lasso: &LassoConfig,
    alpha: f64,
) -> Result<(Estimate, ProjectionFit)> {
    let n = cohort.len();
    if n == 0 {
        return Err(Error::EmptyCohort);
    }
    let nu = bundle.rows();
    let w = cohort.covariates();
    let basis = basis_spec
        .clone()
        .with_treatment(TreatmentTerms::Absent)
        .fit(&w);
    let factor: Vec<f64> = (0..n)
        .map(|i| cohort.rows()[i].a as f64 - nu.g[i])
        .collect();
    let pseudo: Vec<f64> = (0..n).map(|i| cohort.rows()[i].y - nu.theta[i]).collect();
    let fit = r_loss_fit(&basis, &w, &[], &factor, &pseudo, lasso)?;

    let weight: Vec<f64> = nu.g.iter().map(|g| g * (1.0 - g)).collect();
    let (info, inv, cond) = information(&basis, &w, &[], &weight, &fit.selected)?;

    let tau: Vec<f64> = w
        .iter()
        .map(|wi| basis.predict(&fit.beta, wi, 0.0))
        .collect();
    let plug_in = tau.iter().sum::<f64>() / n as f64;
    let mut means = vec![0.0; fit.selected.len()];
    let mut buf = Vec::new();
    for wi in &w {
        basis.eval_into(wi, 0.0, &mut buf);
        for (k, &j) in fit.selected.iter().enumerate() {
            means[k] += buf[j];
        }
    }
    for m in means.iter_mut() {
        *m /= n as f64;
    }
    let resid: Vec<f64> = (0..n).map(|i| pseudo[i] - factor[i] * tau[i]).collect();
    let d_beta = beta_contribution(
        &basis,
        &w,
        &[],
        &factor,
        &resid,
        &fit.selected,
        &inv,
        &means,
    );
    let point = plug_in + d_beta.iter().sum::<f64>() / n as f64;
    let eic: Vec<f64> = (0..n).map(|i| tau[i] - point + d_beta[i]).collect();
    let est = wald_inference(point, eic, alpha);
    Ok((
        est,
        ProjectionFit {
            basis,
            fit,
            basis_means: means,
            information: info,
            condition: cond,
        },
    ))
}

/// Bias projection: fit `τ_S` by R-loss on `(S - Π̂(1|W,A))φ(W,A)` against
/// `Y - Q̄̂(W,A)`, and debias
/// `mean[Π̂(0|W,0)τ̂_S(W,0) - Π̂(0|W,1)τ̂_S(W,1)]` with the enrollment and
/// working-coefficient influence terms.
///
/// The bundle must carry the fitted CATE model. When `Π̂(0|W,a) = 0` on
/// every row the estimand is identically zero and is returned as such.
pub fn estimate_bias_projection(
    cohort: &Cohort,
    bundle: &NuisanceBundle,
    basis_spec: &BasisSpec,
    lasso: &LassoConfig,
    alpha: f64,
) -> Result<(Estimate, ProjectionFit)> {
    let n = cohort.len();
    if n == 0 {
        return Err(Error::EmptyCohort);
    }
    let cate = bundle
        .cate()
        .ok_or_else(|| Error::InvalidInput("bias projection needs the fitted CATE model".into()))?;
    let nu = bundle.rows();
    let w = cohort.covariates();
    let arms = cohort.treatments();
    let basis = basis_spec.fit(&w);

    if bundle.no_external_enrollment() {
        let fit = CoefficientFit {
            beta: vec![0.0; basis.n_columns()],
            selected: Vec::new(),
            information: DMatrix::zeros(0, 0),
            objective_trace: Vec::new(),
            lambda: None,
        };
        let est = wald_inference(0.0, vec![0.0; n], alpha);
        return Ok((
            est,
            ProjectionFit {
                basis,
                fit,
                basis_means: Vec::new(),
                information: DMatrix::zeros(0, 0),
                condition: 1.0,
            },
        ));
    }

    let pi_at = |i: usize, a: usize| nu.pi[a][i];
    let tau_a: Vec<f64> = w.iter().map(|wi| cate.predict(wi, 0.0)).collect();
    let qbar: Vec<f64> = (0..n)
        .map(|i| nu.theta[i] + (arms[i] - nu.g[i]) * tau_a[i])
        .collect();
    let pi_obs: Vec<f64> = (0..n)
        .map(|i| pi_at(i, cohort.rows()[i].a as usize))
        .collect();
    let factor: Vec<f64> = (0..n)
        .map(|i| cohort.rows()[i].s as f64 - pi_obs[i])
        .collect();
    let pseudo: Vec<f64> = (0..n).map(|i| cohort.rows()[i].y - qbar[i]).collect();
    let fit = r_loss_fit(&basis, &w, &arms, &factor, &pseudo, lasso)?;

    let weight: Vec<f64> = pi_obs.iter().map(|p| p * (1.0 - p)).collect();
    let (info, inv, cond) = information(&basis, &w, &arms, &weight, &fit.selected)?;

    let tau_s0: Vec<f64> = w
        .iter()
        .map(|wi| basis.predict(&fit.beta, wi, 0.0))
        .collect();
    let tau_s1: Vec<f64> = w
        .iter()
        .map(|wi| basis.predict(&fit.beta, wi, 1.0))
        .collect();
    let tau_obs: Vec<f64> = (0..n)
        .map(|i| if arms[i] == 1.0 { tau_s1[i] } else { tau_s0[i] })
        .collect();
    let covariate_part: Vec<f64> = (0..n)
        .map(|i| (1.0 - pi_at(i, 0)) * tau_s0[i] - (1.0 - pi_at(i, 1)) * tau_s1[i])
        .collect();
    let plug_in = covariate_part.iter().sum::<f64>() / n as f64;

    // ∂ψ/∂β_j = mean[Π̂(0|W,0)φ_j(W,0) - Π̂(0|W,1)φ_j(W,1)]
    let mut grad = vec![0.0; fit.selected.len()];
    let mut b0 = Vec::new();
    let mut b1 = Vec::new();
    for (i, wi) in w.iter().enumerate() {
        basis.eval_into(wi, 0.0, &mut b0);
        basis.eval_into(wi, 1.0, &mut b1);
        for (k, &j) in fit.selected.iter().enumerate() {
            grad[k] += (1.0 - pi_at(i, 0)) * b0[j] - (1.0 - pi_at(i, 1)) * b1[j];
        }
    }
    for g in grad.iter_mut() {
        *g /= n as f64;
    }

    let resid: Vec<f64> = (0..n).map(|i| pseudo[i] - factor[i] * tau_obs[i]).collect();
    let d_beta = beta_contribution(
        &basis,
        &w,
        &arms,
        &factor,
        &resid,
        &fit.selected,
        &inv,
        &grad,
    );
    let d_pi: Vec<f64> = (0..n)
        .map(|i| {
            let a = arms[i];
            let g1 = nu.g[i];
            let h = a / g1 * tau_s1[i] - (1.0 - a) / (1.0 - g1) * tau_s0[i];
            h * factor[i]
        })
        .collect();
    let correction = (0..n).map(|i| d_pi[i] + d_beta[i]).sum::<f64>() / n as f64;
    let point = plug_in + correction;
    let eic: Vec<f64> = (0..n)
        .map(|i| covariate_part[i] - point + d_pi[i] + d_beta[i])
        .collect();
    let est = wald_inference(point, eic, alpha);
    Ok((
        est,
        ProjectionFit {
            basis,
            fit,
            basis_means: grad,
            information: info,
            condition: cond,
        },
    ))
}
