//! The two numerical workhorses on synthetic data: logistic regression by
//! IRLS and cross-validated weighted lasso with a relaxed refit.

use atmle::nuisance::{fit_logistic, fit_weighted_lasso, LassoConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn main() -> atmle::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, p) = (2000, 8);
    let x = DMatrix::from_fn(n, p, |_, j| {
        if j == 0 {
            1.0
        } else {
            rng.sample(StandardNormal)
        }
    });

    let logit_beta = [-0.5, 1.0, -0.7, 0.0, 0.0, 0.3, 0.0, 0.0];
    let labels: Vec<f64> = (0..n)
        .map(|i| {
            let eta: f64 = (0..p).map(|j| x[(i, j)] * logit_beta[j]).sum();
            f64::from(rng.gen::<f64>() < 1.0 / (1.0 + (-eta).exp()))
        })
        .collect();
    let logistic = fit_logistic(&x, &labels, None)?;
    println!("logistic truth {logit_beta:?}");
    println!("logistic fit   {:?}", rounded(&logistic.beta));

    let lin_beta = [2.0, 0.0, 1.5, 0.0, -1.0, 0.0, 0.0, 0.0];
    let y: Vec<f64> = (0..n)
        .map(|i| {
            (0..p).map(|j| x[(i, j)] * lin_beta[j]).sum::<f64>()
                + rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let config = LassoConfig {
        unpenalized: vec![0],
        ..Default::default()
    };
    let lasso = fit_weighted_lasso(&x, &y, None, &config)?;
    println!("lasso truth    {lin_beta:?}");
    println!(
        "lasso fit      {:?} (selected {:?})",
        rounded(&lasso.beta),
        lasso.selected
    );
    Ok(())
}

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|b| (b * 100.0).round() / 100.0).collect()
}
