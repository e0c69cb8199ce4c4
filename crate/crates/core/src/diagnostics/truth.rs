//! Known data-generating laws for evaluating remainders and oracle bias.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nuisance::{enrollment_prob, pooled_treatment_prob};
use crate::numeric::expit;
use crate::simulation::{
    external_bias, external_propensity, source_shift, trial_outcome_mean, DgpConfig, N_SOURCES,
};

pub type CovariateFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type ArmFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
pub type Sampler = Arc<dyn Fn(&mut ChaCha8Rng) -> Vec<f64> + Send + Sync>;

/// The true law: trial enrollment score, external propensity, outcome
/// regressions and conditional effects, plus a covariate sampler for the
/// pooled population.
#[derive(Clone)]
pub struct TruthSpec {
    /// `P(S=1 | W)`.
    pub q0: CovariateFn,
    /// `P(A=1 | S=0, W)`.
    pub e0: CovariateFn,
    /// `E(Y | W)`.
    pub theta0: CovariateFn,
    /// `E(Y | W, A)`.
    pub qbar0: ArmFn,
    /// `E(Y | W, A=1) - E(Y | W, A=0)`.
    pub tau_a0: CovariateFn,
    /// `E(Y | S=1, W, A) - E(Y | S=0, W, A)`.
    pub tau_s0: ArmFn,
    pub sampler: Sampler,
    pub r: f64,
}

impl std::fmt::Debug for TruthSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TruthSpec")
            .field("r", &self.r)
            .finish_non_exhaustive()
    }
}

impl TruthSpec {
    /// Assemble a consistent law from the two scores, the trial outcome
    /// mean `μ(W, a) = E(Y | S=1, W, a)` and the enrollment effect.
    pub fn from_parts(
        q0: CovariateFn,
        e0: CovariateFn,
        mu: ArmFn,
        tau_s0: ArmFn,
        sampler: Sampler,
        r: f64,
    ) -> Result<Self> {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::InvalidRandomization(r));
        }
        let qbar0: ArmFn = {
            let (q0, e0, mu, tau_s0) = (q0.clone(), e0.clone(), mu.clone(), tau_s0.clone());
            Arc::new(move |w: &[f64], a: f64| {
                let pi = enrollment_prob(q0(w), e0(w), r, a as u8).unwrap_or(1.0);
                mu(w, a) - (1.0 - pi) * tau_s0(w, a)
            })
        };
        let theta0: CovariateFn = {
            let (q0, e0, qbar0) = (q0.clone(), e0.clone(), qbar0.clone());
            Arc::new(move |w: &[f64]| {
                let g = pooled_treatment_prob(q0(w), e0(w), r);
                g * qbar0(w, 1.0) + (1.0 - g) * qbar0(w, 0.0)
            })
        };
        let tau_a0: CovariateFn = {
            let qbar0 = qbar0.clone();
            Arc::new(move |w: &[f64]| qbar0(w, 1.0) - qbar0(w, 0.0))
        };
        Ok(Self {
            q0,
            e0,
            theta0,
            qbar0,
            tau_a0,
            tau_s0,
            sampler,
            r,
        })
    }

    pub fn g0(&self, w: &[f64]) -> f64 {
        pooled_treatment_prob((self.q0)(w), (self.e0)(w), self.r)
    }

    /// `Π0(1 | W, a)`; NaN where nobody receives arm `a`.
    pub fn pi0(&self, w: &[f64], a: u8) -> f64 {
        enrollment_prob((self.q0)(w), (self.e0)(w), self.r, a).unwrap_or(f64::NAN)
    }

    /// Three standard normal covariates, constant scores, trial outcomes as
    /// in the simulation design and the given enrollment effect.
    pub fn constant_scores(q: f64, e: f64, r: f64, tau_s0: ArmFn) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) || !(0.0..1.0).contains(&e) {
            return Err(Error::InvalidInput(format!(
                "constant scores out of range: q = {q}, e = {e}"
            )));
        }
        Self::from_parts(
            Arc::new(move |_| q),
            Arc::new(move |_| e),
            Arc::new(trial_outcome_mean),
            tau_s0,
            standard_normal_sampler(3),
            r,
        )
    }

    /// The pooled population of the simulation design: trial rows and the
    /// five shifted external sources mixed in proportion to their sizes.
    pub fn simulation_design(cfg: &DgpConfig) -> Result<Self> {
        cfg.validate()?;
        let n_rct = cfg.n_rct as f64;
        let sizes: Vec<f64> = cfg.source_sizes.iter().map(|&s| s as f64).collect();
        let shifts: Vec<[f64; 3]> = (1..=N_SOURCES as u32).map(source_shift).collect();
        // density of source j relative to the trial covariate density
        let ratios = {
            let shifts = shifts.clone();
            move |w: &[f64]| -> Vec<f64> {
                shifts
                    .iter()
                    .map(|m| {
                        let dot: f64 = m.iter().zip(w).map(|(a, b)| a * b).sum();
                        let sq: f64 = m.iter().map(|a| a * a).sum();
                        (dot - 0.5 * sq).exp()
                    })
                    .collect()
            }
        };
        let q0: CovariateFn = {
            let (ratios, sizes) = (ratios.clone(), sizes.clone());
            Arc::new(move |w: &[f64]| {
                let ext: f64 = ratios(w).iter().zip(&sizes).map(|(r, n)| r * n).sum();
                n_rct / (n_rct + ext)
            })
        };
        let tau_s0: ArmFn = {
            let (ratios, sizes) = (ratios.clone(), sizes.clone());
            Arc::new(move |w: &[f64], a: f64| {
                let weights: Vec<f64> = ratios(w).iter().zip(&sizes).map(|(r, n)| r * n).collect();
                let total: f64 = weights.iter().sum();
                -weights
                    .iter()
                    .enumerate()
                    .map(|(k, p)| p * external_bias(k as u32 + 1, w, a))
                    .sum::<f64>()
                    / total
            })
        };
        let total = n_rct + sizes.iter().sum::<f64>();
        let cum: Vec<f64> = sizes
            .iter()
            .scan(n_rct, |acc, n| {
                *acc += n;
                Some(*acc / total)
            })
            .collect();
        let p_rct = n_rct / total;
        let sampler: Sampler = Arc::new(move |r: &mut ChaCha8Rng| {
            let u: f64 = r.gen();
            let z: Vec<f64> = (0..3).map(|_| r.sample(StandardNormal)).collect();
            if u < p_rct {
                return z;
            }
            let j = cum.iter().position(|&c| u < c).unwrap_or(N_SOURCES - 1);
            z.iter().zip(&shifts[j]).map(|(a, m)| a + m).collect()
        });
        Self::from_parts(
            q0,
            Arc::new(external_propensity),
            Arc::new(trial_outcome_mean),
            tau_s0,
            sampler,
            cfg.r,
        )
    }
}

pub fn standard_normal_sampler(d: usize) -> Sampler {
    Arc::new(move |r: &mut ChaCha8Rng| (0..d).map(|_| r.sample(StandardNormal)).collect())
}

/// Logistic trial enrollment score `expit(c0 + Σ c_j W_j)`.
pub fn logistic_score(coefs: Vec<f64>) -> CovariateFn {
    Arc::new(move |w: &[f64]| {
        expit(coefs[0] + coefs[1..].iter().zip(w).map(|(c, x)| c * x).sum::<f64>())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_scores_compose() {
        let t = TruthSpec::constant_scores(0.4, 0.3, 0.5, Arc::new(|_, _| -1.0)).unwrap();
        let w = [0.1, 0.2, 0.3];
        assert!((t.g0(&w) - (0.5 * 0.4 + 0.3 * 0.6)).abs() < 1e-15);
        assert!((t.pi0(&w, 1) - 0.2 / 0.38).abs() < 1e-15);
        // E(Y|W,a) = μ - Π0(0|W,a) τ_S
        let expect = trial_outcome_mean(&w, 1.0) + (1.0 - 0.2 / 0.38);
        assert!(((t.qbar0)(&w, 1.0) - expect).abs() < 1e-12);
    }

    #[test]
    fn simulation_design_scores() {
        let t = TruthSpec::simulation_design(&DgpConfig::default()).unwrap();
        // at W = 0 every source has density ratio exp(-|m|²/2)
        let w = [0.0; 3];
        let ext: f64 = (1..=5)
            .map(|j| 5000.0 * (-0.5 * 3.0 * (0.2 * (j as f64 - 1.0)).powi(2)).exp())
            .sum();
        assert!(((t.q0)(&w) - 400.0 / (400.0 + ext)).abs() < 1e-12);
        assert!(((t.e0)(&w) - expit(-2.0)).abs() < 1e-15);
        // only sources 1-5 contribute, with bias 0 for source 1
        assert!((t.tau_s0)(&w, 0.0) < 0.0);
    }
}
