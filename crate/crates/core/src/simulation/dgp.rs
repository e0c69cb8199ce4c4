//! Trial plus five external sources of decreasing quality.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cohort::{validate_cohort, Cohort, Observation};
use crate::error::{Error, Result};
use crate::numeric::expit;
use crate::rng;

/// Treatment effect built into the outcome model.
pub const TRUE_ATE: f64 = 0.5;
pub const N_SOURCES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DgpConfig {
    pub n_rct: usize,
    /// Pool size of each external source, source 1 first.
    pub source_sizes: Vec<usize>,
    pub seed: u64,
    /// Standard deviation of the outcome noise.
    pub uy_sd: f64,
    /// Trial randomization probability.
    pub r: f64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n_rct: 400,
            source_sizes: vec![5000; N_SOURCES],
            seed: 0,
            uy_sd: 3.0,
            r: 0.5,
        }
    }
}

impl DgpConfig {
    pub fn pool_size(&self) -> usize {
        self.source_sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rct == 0 {
            return Err(Error::Config("n_rct must be positive".into()));
        }
        if self.source_sizes.len() != N_SOURCES {
            return Err(Error::Config(format!(
                "source_sizes must list {N_SOURCES} sizes"
            )));
        }
        if !(self.uy_sd > 0.0 && self.uy_sd.is_finite()) {
            return Err(Error::Config("uy_sd must be positive".into()));
        }
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(Error::Config("r must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Covariate mean shift of source `j` (1-based): `(δ, -δ, δ)` with
/// `δ = 0.2 (j - 1)`.
pub fn source_shift(j: u32) -> [f64; 3] {
    let d = 0.2 * (j as f64 - 1.0);
    [d, -d, d]
}

/// `P(A=1 | W)` in every external source.
pub fn external_propensity(w: &[f64]) -> f64 {
    expit(-2.0 + 1.6 * w[0] - 2.0 * w[1])
}

/// Additive outcome shift of an external row from source `j` relative to
/// a trial row with the same `(W, A)`.
pub fn external_bias(j: u32, w: &[f64], a: f64) -> f64 {
    match j {
        1 => 0.0,
        2 | 3 => 0.5 + 1.4 * w[0] * a,
        4 => 0.5 + 1.4 * w[0] * a + 0.2 * w[2],
        _ => 1.3 + 1.4 * w[0] * a + 0.2 * w[2],
    }
}

/// Outcome mean for a trial row.
pub fn trial_outcome_mean(w: &[f64], a: f64) -> f64 {
    2.5 + 0.9 * w[0] + 1.1 * w[1] + 2.7 * w[2] + TRUE_ATE * a
}

/// Trial rows first (source label 0), then each source in turn (labels
/// 1 to 5). Deterministic in `config.seed`.
pub fn generate_pool(config: &DgpConfig) -> Result<Cohort> {
    config.validate()?;
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let noise = Normal::new(0.0, config.uy_sd).expect("validated sd");
    let mut rows = Vec::with_capacity(config.n_rct + config.pool_size());

    let mut rg = rng::stream(config.seed, &[0]);
    let arm = Bernoulli::new(config.r).expect("validated r");
    for _ in 0..config.n_rct {
        let w: Vec<f64> = (0..3).map(|_| std.sample(&mut rg)).collect();
        let a = u8::from(arm.sample(&mut rg));
        let y = trial_outcome_mean(&w, a as f64) + noise.sample(&mut rg);
        rows.push(Observation::new(1, w, a, y).with_source(0));
    }
    for (k, &size) in config.source_sizes.iter().enumerate() {
        let j = k as u32 + 1;
        let shift = source_shift(j);
        let mut rg = rng::stream(config.seed, &[j as u64]);
        for _ in 0..size {
            let w: Vec<f64> = shift.iter().map(|m| m + std.sample(&mut rg)).collect();
            let a = u8::from(rg.gen::<f64>() < external_propensity(&w));
            let af = a as f64;
            let y = trial_outcome_mean(&w, af) + external_bias(j, &w, af) + noise.sample(&mut rg);
            rows.push(Observation::new(0, w, a, y).with_source(j));
        }
    }
    validate_cohort(rows, config.r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let cfg = DgpConfig {
            n_rct: 50,
            source_sizes: vec![20; 5],
            seed: 9,
            ..Default::default()
        };
        assert_eq!(generate_pool(&cfg).unwrap(), generate_pool(&cfg).unwrap());
        let other = DgpConfig {
            seed: 10,
            ..cfg.clone()
        };
        assert_ne!(generate_pool(&cfg).unwrap(), generate_pool(&other).unwrap());
    }

    #[test]
    fn bias_cases() {
        let w = [1.0, 2.0, 3.0];
        assert_eq!(external_bias(1, &w, 1.0), 0.0);
        assert_eq!(external_bias(2, &w, 0.0), 0.5);
        assert!((external_bias(3, &w, 1.0) - 1.9).abs() < 1e-15);
        assert!((external_bias(4, &w, 1.0) - 2.5).abs() < 1e-12);
        // source 5 controls at the source mean: 1.3 + 0.2 * 0.8
        assert!((external_bias(5, &source_shift(5), 0.0) - 1.46).abs() < 1e-12);
    }

    #[test]
    fn layout_and_labels() {
        let cfg = DgpConfig {
            n_rct: 10,
            source_sizes: vec![3, 4, 5, 6, 7],
            ..Default::default()
        };
        let c = generate_pool(&cfg).unwrap();
        assert_eq!(c.len(), 35);
        assert!(c.rows()[..10]
            .iter()
            .all(|o| o.s == 1 && o.source == Some(0)));
        assert_eq!(c.rows()[10].source, Some(1));
        assert_eq!(c.rows()[34].source, Some(5));
    }
}
