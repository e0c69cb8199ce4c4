//! Composition of the pooled treatment mechanism `g` and the enrollment
//! mechanism `Π` from the trial enrollment score `q(W) = P(S=1|W)`, the
//! external propensity `e(W) = P(A=1|S=0,W)` and the known randomization
//! probability `r`.

use crate::error::{Error, Result};

/// `g(1|W) = r·q + e·(1-q)`.
pub fn pooled_treatment_prob(q: f64, e: f64, r: f64) -> f64 {
    r * q + e * (1.0 - q)
}

/// `Π(1|W,a)`: probability of trial membership given covariates and arm.
///
/// Returns `None` when nobody in the pooled population receives arm `a` at
/// these scores (zero denominator).
pub fn enrollment_prob(q: f64, e: f64, r: f64, a: u8) -> Option<f64> {
    let (p_trial, p_ext) = if a == 1 { (r, e) } else { (1.0 - r, 1.0 - e) };
    let num = p_trial * q;
    let den = num + p_ext * (1.0 - q);
    (den > 0.0).then(|| num / den)
}

/// Returns `(g(1|W), Π(1|W,a))`.
pub fn compose_scores(q: f64, e: f64, r: f64, a: u8) -> Result<(f64, f64)> {
    let g = pooled_treatment_prob(q, e, r);
    let pi = enrollment_prob(q, e, r, a).ok_or(Error::Positivity { rows: vec![] })?;
    Ok((g, pi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-15
    }

    #[test]
    fn trial_only_population() {
        for a in [0, 1] {
            let (g, pi) = compose_scores(1.0, 0.3, 0.5, a).unwrap();
            assert!(close(g, 0.5));
            assert!(close(pi, 1.0));
        }
    }

    #[test]
    fn external_controls_only() {
        let (g, pi0) = compose_scores(0.5, 0.0, 0.5, 0).unwrap();
        assert!(close(g, 0.25));
        assert!(close(pi0, 1.0 / 3.0));
        let (_, pi1) = compose_scores(0.5, 0.0, 0.5, 1).unwrap();
        assert!(close(pi1, 1.0));
    }

    #[test]
    fn constant_score_design_target() {
        let q = 1.0 / 31.0;
        for a in [0, 1] {
            let (g, pi) = compose_scores(q, 0.5, 0.5, a).unwrap();
            assert!(close(g, 0.5));
            assert!(close(pi, q));
        }
    }

    #[test]
    fn zero_denominator_is_positivity_error() {
        // no trial rows (q = 0) and no external treated (e = 0)
        assert!(matches!(
            compose_scores(0.0, 0.0, 0.5, 1),
            Err(Error::Positivity { .. })
        ));
    }

    #[test]
    fn external_controls_identity_g_is_half_q() {
        for &q in &[0.1, 0.37, 0.8] {
            let g = pooled_treatment_prob(q, 0.0, 0.5);
            assert_eq!(g, 0.5 * q);
        }
    }
}
