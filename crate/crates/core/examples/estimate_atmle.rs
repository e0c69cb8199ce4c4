//! Fit A-TMLE on a trial augmented with a matched external cohort and show
//! how the combined estimate splits into pooled minus bias.

use atmle::cohort::split_by_study;
use atmle::estimators::{estimate_atmle, estimate_tmle_rct, AtmleOptions};
use atmle::matching::{two_step_match, MatchSpec};
use atmle::nuisance::{BasisSpec, LassoConfig, TreatmentTerms};
use atmle::simulation::{generate_pool, DgpConfig};

pub fn main() -> atmle::Result<()> {
    let pool = generate_pool(&DgpConfig {
        seed: 7,
        ..Default::default()
    })?;
    let spec = MatchSpec {
        target_external_n: Some(500),
        ..Default::default()
    };
    let matched = two_step_match(&pool, &spec, &BasisSpec::main_terms())?;
    let (trial, _) = split_by_study(&pool);
    let rows: Vec<usize> = trial
        .iter()
        .chain(&matched.selected_external)
        .copied()
        .collect();
    let cohort = pool.subset(&rows);

    let fit = estimate_atmle(&cohort, &AtmleOptions::default().with_seed(7))?;
    let basis = BasisSpec::main_terms().with_treatment(TreatmentTerms::Interacted);
    let trial_only =
        estimate_tmle_rct(&pool.subset(&trial), &basis, &LassoConfig::default(), 0.05)?;

    println!("cohort: {:?}", cohort.counts());
    for (name, est) in [
        ("pooled", &fit.pooled),
        ("bias", &fit.bias),
        ("combined", &fit.combined),
        ("trial only", &trial_only),
    ] {
        println!(
            "{name:>10}: {:+.3}  se {:.3}  95% CI [{:+.3}, {:+.3}]",
            est.point, est.se, est.ci_lo, est.ci_hi
        );
    }
    println!(
        "pooled - bias - combined = {:.1e}",
        fit.pooled.point - fit.bias.point - fit.combined.point
    );
    println!("bias model kept {:?}", fit.diagnostics.bias_selected);
    Ok(())
}
