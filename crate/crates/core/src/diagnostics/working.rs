//! Working-model functions and population projections of the true effects.

use nalgebra::{DMatrix, DVector};

use super::mc::chunked_mean_vec;
use super::truth::TruthSpec;
use crate::error::{Error, Result};
use crate::estimators::{INFO_JITTER, MAX_CONDITION};
use crate::nuisance::{Basis, BasisSpec};
use crate::numeric::inverse_spd;

/// `φ_S(W, a)ᵀβ` on the columns `S` of a basis.
#[derive(Debug, Clone)]
pub struct WorkingFunction {
    pub basis: Basis,
    /// Full-length coefficients; entries outside `columns` are ignored.
    pub beta: Vec<f64>,
    pub columns: Vec<usize>,
}

impl WorkingFunction {
    /// All columns of `basis`, coefficients zero.
    pub fn zero(basis: Basis) -> Self {
        let p = basis.n_columns();
        Self {
            basis,
            beta: vec![0.0; p],
            columns: (0..p).collect(),
        }
    }

    pub fn predict(&self, w: &[f64], a: f64) -> f64 {
        let mut buf = Vec::new();
        self.basis.eval_into(w, a, &mut buf);
        self.columns.iter().map(|&j| buf[j] * self.beta[j]).sum()
    }

    pub(crate) fn features(&self, w: &[f64], a: f64, buf: &mut Vec<f64>, out: &mut Vec<f64>) {
        self.basis.eval_into(w, a, buf);
        out.clear();
        out.extend(self.columns.iter().map(|&j| buf[j]));
    }

    /// Same function plus `delta` on every selected coefficient.
    pub fn shifted(&self, delta: f64) -> Self {
        let mut out = self.clone();
        for &j in &self.columns {
            out.beta[j] += delta;
        }
        out
    }
}

/// Fit a basis spec's knots on (a prefix of) the Monte Carlo draws.
pub fn fit_basis(spec: &BasisSpec, draws: &[Vec<f64>]) -> Basis {
    let take = draws.len().min(20_000);
    let w: Vec<&[f64]> = draws[..take].iter().map(|d| d.as_slice()).collect();
    spec.fit(&w)
}

/// Weighted information `mean Σ_a weight(W,a) φ_S φ_Sᵀ` and its inverse.
pub(crate) fn population_information<F>(
    f: &WorkingFunction,
    draws: &[Vec<f64>],
    arms: &[f64],
    chunk: usize,
    weight: F,
) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)>
where
    F: Fn(&[f64], f64) -> f64 + Sync,
{
    let k = f.columns.len();
    let flat = chunked_mean_vec(draws.len(), k * k, chunk, |i, out| {
        let (mut buf, mut phi) = (Vec::new(), Vec::new());
        for &a in arms {
            let wt = weight(&draws[i], a);
            if wt == 0.0 {
                continue;
            }
            f.features(&draws[i], a, &mut buf, &mut phi);
            for p in 0..k {
                for q in 0..k {
                    out[p * k + q] += wt * phi[p] * phi[q];
                }
            }
        }
    });
    let info = DMatrix::from_row_slice(k, k, &flat);
    let (inv, cond) = inverse_spd(&info, INFO_JITTER);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::SingularInformation { condition: cond });
    }
    Ok((info, inv, cond))
}

/// Coefficients minimizing `E Σ_a weight(W,a)(target(W,a) - φ_S(W,a)ᵀβ)²`.
pub(crate) fn project<F, T>(
    template: &WorkingFunction,
    draws: &[Vec<f64>],
    arms: &[f64],
    chunk: usize,
    weight: F,
    target: T,
) -> Result<WorkingFunction>
where
    F: Fn(&[f64], f64) -> f64 + Sync,
    T: Fn(&[f64], f64) -> f64 + Sync,
{
    let mut out = template.clone();
    out.beta.iter_mut().for_each(|b| *b = 0.0);
    let k = out.columns.len();
    if k == 0 {
        return Ok(out);
    }
    let (_, inv, _) = population_information(&out, draws, arms, chunk, &weight)?;
    let rhs = chunked_mean_vec(draws.len(), k, chunk, |i, acc| {
        let (mut buf, mut phi) = (Vec::new(), Vec::new());
        for &a in arms {
            let wt = weight(&draws[i], a);
            if wt == 0.0 {
                continue;
            }
            out.features(&draws[i], a, &mut buf, &mut phi);
            let t = target(&draws[i], a);
            for p in 0..k {
                acc[p] += wt * phi[p] * t;
            }
        }
    });
    let beta = inv * DVector::from_vec(rhs);
    for (p, &j) in template.columns.iter().enumerate() {
        out.beta[j] = beta[p];
    }
    Ok(out)
}

/// `g0(a | W)`.
pub(crate) fn arm_prob(truth: &TruthSpec, w: &[f64], a: f64) -> f64 {
    let g = truth.g0(w);
    if a == 1.0 {
        g
    } else {
        1.0 - g
    }
}

/// Projection of the true CATE with weights `g0(1-g0)`, on `template`'s
/// columns (evaluated at `A = 0`).
pub fn project_tau_a(
    truth: &TruthSpec,
    template: &WorkingFunction,
    draws: &[Vec<f64>],
    chunk: usize,
) -> Result<WorkingFunction> {
    project(
        template,
        draws,
        &[0.0],
        chunk,
        |w, _| {
            let g = truth.g0(w);
            g * (1.0 - g)
        },
        |w, _| (truth.tau_a0)(w),
    )
}

/// Projection of the true enrollment effect with weights
/// `g0(a|W) Π0(1-Π0)(W,a)`, summed over both arms.
pub fn project_tau_s(
    truth: &TruthSpec,
    template: &WorkingFunction,
    draws: &[Vec<f64>],
    chunk: usize,
) -> Result<WorkingFunction> {
    project(
        template,
        draws,
        &[0.0, 1.0],
        chunk,
        |w, a| enrollment_weight(truth, w, a),
        |w, a| (truth.tau_s0)(w, a),
    )
}

pub(crate) fn enrollment_weight(truth: &TruthSpec, w: &[f64], a: f64) -> f64 {
    let p = truth.pi0(w, a as u8);
    if p.is_nan() {
        0.0
    } else {
        arm_prob(truth, w, a) * p * (1.0 - p)
    }
}
