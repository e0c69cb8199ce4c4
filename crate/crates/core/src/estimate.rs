//! Point estimates with influence-curve based Wald inference.

use serde::{Deserialize, Serialize};

use crate::numeric::{normal_cdf, sample_sd, z_two_sided};

/// A point estimate together with its per-row influence values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub point: f64,
    #[serde(skip)]
    pub eic: Vec<f64>,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub p_value: f64,
    pub n: usize,
    /// Set when the influence values have zero variance.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl Estimate {
    pub fn ci_width(&self) -> f64 {
        self.ci_hi - self.ci_lo
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_lo <= value && value <= self.ci_hi
    }

    /// Two-sided rejection of `H0: value = 0` at level `alpha`.
    pub fn rejects_zero(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Wald interval `point ± z_{1-alpha/2} · sd(eic)/sqrt(n)` and the two-sided
/// p-value for a zero null.
pub fn wald_inference(point: f64, eic: Vec<f64>, alpha: f64) -> Estimate {
    let n = eic.len();
    let se = if n > 1 {
        sample_sd(&eic) / (n as f64).sqrt()
    } else {
        0.0
    };
    let degenerate = !(se > 0.0);
    if degenerate {
        log::warn!("influence curve has zero variance; interval collapses to the point");
    }
    let se = if se.is_finite() { se } else { 0.0 };
    let z = z_two_sided(alpha);
    let p_value = if se > 0.0 {
        2.0 * (1.0 - normal_cdf((point / se).abs()))
    } else if point == 0.0 {
        1.0
    } else {
        0.0
    };
    Estimate {
        point,
        eic,
        se,
        ci_lo: point - z * se,
        ci_hi: point + z * se,
        p_value,
        n,
        degenerate,
    }
}
