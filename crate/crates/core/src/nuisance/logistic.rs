//! Weighted logistic regression by damped iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};

use super::CoefficientFit;
use crate::error::{Error, Result};
use crate::numeric::{dependent_columns, expit};

const MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 20;
const SCORE_TOL: f64 = 1e-8;
/// Linear predictors beyond this magnitude put fitted probabilities within
/// machine precision of 0 or 1.
const SEPARATION_ETA: f64 = 30.0;

fn weight_vec(n: usize, weights: Option<&[f64]>) -> Vec<f64> {
    weights.map_or_else(|| vec![1.0; n], |w| w.to_vec())
}

fn log1pexp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Weighted mean Bernoulli log-likelihood at `beta`.
pub fn logistic_loglik(x: &DMatrix<f64>, y: &[f64], weights: Option<&[f64]>, beta: &[f64]) -> f64 {
    let w = weight_vec(y.len(), weights);
    let eta = x * DVector::from_column_slice(beta);
    let total: f64 = w.iter().sum();
    let mut ll = 0.0;
    for i in 0..y.len() {
        ll += w[i] * (y[i] * eta[i] - log1pexp(eta[i]));
    }
    ll / total
}

/// Gradient of [`logistic_loglik`] with respect to `beta`.
pub fn logistic_score(
    x: &DMatrix<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    beta: &[f64],
) -> Vec<f64> {
    let w = weight_vec(y.len(), weights);
    let eta = x * DVector::from_column_slice(beta);
    let total: f64 = w.iter().sum();
    let resid: Vec<f64> = (0..y.len())
        .map(|i| w[i] * (y[i] - expit(eta[i])))
        .collect();
    (0..x.ncols())
        .map(|j| {
            x.column(j)
                .iter()
                .zip(&resid)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / total
        })
        .collect()
}

/// Maximize the weighted Bernoulli log-likelihood of `y` on the columns of
/// `x`. Converges when every score component is below `1e-8` in absolute
/// value (scores are per unit weight).
pub fn fit_logistic(
    x: &DMatrix<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
) -> Result<CoefficientFit> {
    let (n, p) = x.shape();
    if n != y.len() {
        return Err(Error::InvalidInput(format!(
            "design has {n} rows but {} labels",
            y.len()
        )));
    }
    if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::NonBinary {
            row: i,
            field: "label",
            value: y[i].to_string(),
        });
    }
    let w = weight_vec(n, weights);
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidInput(
            "weights must be finite and nonnegative".into(),
        ));
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidInput("all weights are zero".into()));
    }
    let dependent = dependent_columns(x, 1e-10);
    if !dependent.is_empty() {
        return Err(Error::RankDeficient { columns: dependent });
    }

    let objective = |eta: &DVector<f64>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            s += w[i] * (log1pexp(eta[i]) - y[i] * eta[i]);
        }
        s / total
    };

    let mut beta = DVector::zeros(p);
    let mut eta = DVector::zeros(n);
    let mut obj = objective(&eta);
    let mut trace = vec![obj];
    let mut hess = DMatrix::zeros(p, p);
    let mut converged = false;

    for _ in 0..MAX_ITER {
        let mut score = DVector::zeros(p);
        hess.fill(0.0);
        for i in 0..n {
            let mu = expit(eta[i]);
            let r = w[i] * (y[i] - mu);
            let v = w[i] * mu * (1.0 - mu);
            for j in 0..p {
                let xij = x[(i, j)];
                score[j] += xij * r;
                let vx = v * xij;
                for k in 0..=j {
                    hess[(j, k)] += vx * x[(i, k)];
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                hess[(k, j)] = hess[(j, k)];
            }
        }
        score /= total;
        hess /= total;
        if score.amax() <= SCORE_TOL {
            converged = true;
            break;
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&score),
            None => return Err(separation_error(x, beta.as_slice())),
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand = &beta + &step * t;
            let cand_eta = x * &cand;
            let cand_obj = objective(&cand_eta);
            if cand_obj <= obj {
                beta = cand;
                eta = cand_eta;
                obj = cand_obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        trace.push(obj);
        if !accepted {
            // no further ascent possible at working precision
            converged = score.amax() <= 1e-6;
            break;
        }
        if eta.amax() > SEPARATION_ETA {
            return Err(separation_error(x, beta.as_slice()));
        }
    }
    if !converged {
        if eta.amax() > SEPARATION_ETA / 2.0 {
            return Err(separation_error(x, beta.as_slice()));
        }
        return Err(Error::NotConverged {
            solver: "logistic IRLS",
            iterations: MAX_ITER,
        });
    }
    Ok(CoefficientFit {
        beta: beta.iter().copied().collect(),
        selected: (0..p).collect(),
        information: hess,
        objective_trace: trace,
        lambda: None,
    })
}

/// Separation is reported against the non-constant column carrying the
/// largest scaled coefficient.
fn separation_error(x: &DMatrix<f64>, beta: &[f64]) -> Error {
    let mut best = (0usize, -1.0f64);
    for j in 0..x.ncols() {
        let col = x.column(j);
        let m = col.mean();
        let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64).sqrt();
        if sd == 0.0 {
            continue;
        }
        let s = beta.get(j).copied().unwrap_or(0.0).abs() * sd;
        if s > best.1 {
            best = (j, s);
        }
    }
    Error::Separation { column: best.0 }
}

/// Predicted probabilities `expit(X beta)`.
pub fn predict_logistic(x: &DMatrix<f64>, beta: &[f64]) -> Vec<f64> {
    let eta = x * DVector::from_column_slice(beta);
    eta.iter().map(|&e| expit(e)).collect()
}
