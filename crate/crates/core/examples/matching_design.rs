//! Outcome-blind two-stage matching: trial enrollment score first, then
//! external propensity, then trimming to a target size.

use atmle::matching::{
    fit_enrollment_score, match_propensity, match_trial_enrollment, refit_external_propensity,
    trim_to_size, MatchSpec, TrimPolicy,
};
use atmle::nuisance::BasisSpec;
use atmle::simulation::{generate_pool, DgpConfig};

pub fn main() -> atmle::Result<()> {
    let pool = generate_pool(&DgpConfig {
        seed: 3,
        ..Default::default()
    })?;
    let spec = MatchSpec::default();
    let q_hat = fit_enrollment_score(&pool, &BasisSpec::main_terms())?;
    let stage1 = match_trial_enrollment(&pool, &q_hat, &spec)?;
    println!("pool: {:?}", pool.counts());
    println!(
        "S ~ W refit before matching: max |coef| = {:.3}",
        stage1.balance_before.max_abs_coef
    );
    println!(
        "after enrollment matching ({} externals): max |coef| = {:.3}",
        stage1.selected_external.len(),
        stage1.balance_after.max_abs_coef
    );

    let e_hat = refit_external_propensity(&pool, &stage1.selected_external)?;
    let stage2 = match_propensity(&pool, &stage1, &e_hat, spec.m)?;
    println!(
        "after propensity matching: {} externals, {} treated anchors dropped",
        stage2.selected_external.len(),
        stage2.dropped.len()
    );

    for target in [500, 1000] {
        let trimmed = trim_to_size(&pool, &stage2, target, TrimPolicy::BestDistance)?;
        let mut per_source = [0usize; 5];
        for &i in &trimmed.selected_external {
            if let Some(j) = pool.rows()[i].source {
                per_source[j as usize - 1] += 1;
            }
        }
        println!("trimmed to {target}: rows per source {per_source:?}");
    }
    Ok(())
}
