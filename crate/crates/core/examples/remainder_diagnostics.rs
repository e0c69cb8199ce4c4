//! Exact second-order remainders: perturb the treatment mechanism or the
//! enrollment mechanism by `eps` and watch the remainder shrink like `eps²`.

use std::sync::Arc;

use atmle::diagnostics::{
    exact_remainder_bias, exact_remainder_pooled, loglog_slope, Candidate, McConfig, TruthSpec,
};
use atmle::nuisance::{BasisSpec, TreatmentTerms};

pub fn main() -> atmle::Result<()> {
    let mc = McConfig::new(100_000, 1);
    let truth = TruthSpec::constant_scores(
        0.4,
        0.5,
        0.5,
        Arc::new(|w: &[f64], a| -0.3 - 0.2 * w[0] - 0.4 * a * w[1]),
    )?;
    let pooled = BasisSpec::main_terms();
    let bias = BasisSpec::main_terms().with_treatment(TreatmentTerms::Interacted);
    let candidate = Candidate::projected(&truth, &pooled, &bias, &mc)?;

    let eps = [0.01, 0.02, 0.04, 0.08];
    let mut pooled_r = Vec::new();
    let mut bias_r = Vec::new();
    for &e in &eps {
        pooled_r.push(
            exact_remainder_pooled(&truth, &candidate.clone().with_g_shift(e), &mc)?
                .value
                .estimate,
        );
        bias_r.push(
            exact_remainder_bias(&truth, &candidate.clone().with_pi_shift(e), &mc)?
                .value
                .estimate,
        );
    }
    println!("{:>6} {:>12} {:>12}", "eps", "R pooled", "R bias");
    for i in 0..eps.len() {
        println!("{:>6} {:>12.3e} {:>12.3e}", eps[i], pooled_r[i], bias_r[i]);
    }
    println!(
        "log-log slopes: pooled {:.2}, bias {:.2}",
        loglog_slope(&eps, &pooled_r)?,
        loglog_slope(&eps, &bias_r)?
    );
    Ok(())
}
