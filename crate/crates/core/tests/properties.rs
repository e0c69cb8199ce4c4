//! Invariants checked over randomly generated inputs.

use atmle::cli::config::parse_json;
use atmle::cli::io::{read_cohort_csv, write_cohort_csv};
use atmle::diagnostics::chunked_mean;
use atmle::estimators::{estimate_atmle, AtmleOptions};
use atmle::matching::{sample_random, trim_to_size, two_step_match, MatchSpec, TrimPolicy};
use atmle::nuisance::{
    compose_scores, enrollment_prob, fit_weighted_lasso, pooled_treatment_prob, BasisSpec,
    LassoConfig,
};
use atmle::numeric::{expit, logit, spearman};
use atmle::simulation::{generate_pool, DgpConfig, ExperimentConfig, Strategy as Arm};
use atmle::{validate_cohort, wald_inference, Cohort, Observation};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn observation() -> impl Strategy<Value = Observation> {
    (
        0u8..2,
        0u8..2,
        -1e6..1e6f64,
        prop::collection::vec(-1e3..1e3f64, 3),
        prop::option::of(1u32..6),
    )
        .prop_map(|(s, a, y, w, src)| {
            let o = Observation::new(s, w, a, y);
            match src {
                Some(j) => o.with_source(j),
                None => o,
            }
        })
}

fn small_pool(seed: u64) -> Cohort {
    generate_pool(&DgpConfig {
        n_rct: 60,
        source_sizes: vec![300; 5],
        seed,
        ..Default::default()
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn composed_scores_are_probabilities_and_recover_the_enrollment_score(
        q in 0.001..0.999f64, e in 0.0..=1.0f64, r in 0.01..0.99f64,
    ) {
        let (g1, pi1) = compose_scores(q, e, r, 1).unwrap_or((pooled_treatment_prob(q, e, r), 0.0));
        prop_assert!((0.0..=1.0).contains(&g1));
        prop_assert!((0.0..=1.0).contains(&pi1));
        // Σ_a g(a|W) Π(1|W,a) = P(S=1|W)
        let pi0 = enrollment_prob(q, e, r, 0).unwrap_or(0.0);
        prop_assert!((g1 * pi1 + (1.0 - g1) * pi0 - q).abs() < 1e-12);
    }

    // beyond |x| = 15, 1 - expit(x) has too few significant digits left
    #[test]
    fn logit_inverts_expit(x in -15.0..15.0f64) {
        prop_assert!((logit(expit(x)) - x).abs() < 1e-6 * x.abs().max(1.0));
    }

    #[test]
    fn cohort_csv_round_trips_exactly(rows in prop::collection::vec(observation(), 1..40)) {
        let cohort = validate_cohort(rows, 0.5).unwrap();
        let mut buf = Vec::new();
        write_cohort_csv(&mut buf, &cohort, None).unwrap();
        let back = read_cohort_csv(buf.as_slice(), 0.5).unwrap();
        let has_source = cohort.rows().iter().any(|o| o.source.is_some());
        for (a, b) in cohort.rows().iter().zip(back.rows()) {
            prop_assert_eq!((a.s, a.a, a.y.to_bits()), (b.s, b.a, b.y.to_bits()));
            prop_assert_eq!(&a.w, &b.w);
            prop_assert_eq!(a.source, if has_source { b.source } else { None });
        }
        prop_assert_eq!(cohort.len(), back.len());
    }

    #[test]
    fn chunked_mean_does_not_depend_on_the_chunk(
        values in prop::collection::vec(-1e3..1e3f64, 1..500), chunk in 1usize..600,
    ) {
        let whole = chunked_mean(&values, values.len());
        let scale = values.iter().map(|v| v.abs()).fold(1.0, f64::max);
        prop_assert!((chunked_mean(&values, chunk) - whole).abs() < 1e-12 * scale);
    }

    #[test]
    fn wald_intervals_contain_the_point_and_narrow_with_alpha(
        point in -10.0..10.0f64, eic in prop::collection::vec(-5.0..5.0f64, 3..100),
    ) {
        let wide = wald_inference(point, eic.clone(), 0.01);
        let narrow = wald_inference(point, eic, 0.2);
        prop_assert!(wide.ci_lo <= point && point <= wide.ci_hi);
        prop_assert!(narrow.ci_width() <= wide.ci_width());
        prop_assert!((0.0..=1.0).contains(&wide.p_value));
    }

    #[test]
    fn spearman_is_bounded_and_rank_invariant(
        pairs in prop::collection::vec((-1e3..1e3f64, -1e3..1e3f64), 3..60),
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let rho = spearman(&x, &y);
        prop_assume!(rho.is_finite());
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&rho));
        let x3: Vec<f64> = x.iter().map(|v| v * v * v).collect();
        prop_assert!((spearman(&x3, &y) - rho).abs() < 1e-12);
    }

    #[test]
    fn random_draws_are_distinct_members_of_the_pool(
        pool in prop::collection::btree_set(0usize..10_000, 1..200), frac in 0.0..=1.0f64, seed: u64,
    ) {
        let pool: Vec<usize> = pool.into_iter().collect();
        let n = (frac * pool.len() as f64) as usize;
        let mut drawn = sample_random(&pool, n, seed).unwrap();
        prop_assert_eq!(drawn.len(), n);
        drawn.sort_unstable();
        drawn.dedup();
        prop_assert_eq!(drawn.len(), n);
        prop_assert!(drawn.iter().all(|i| pool.binary_search(i).is_ok()));
        prop_assert!(sample_random(&pool, pool.len() + 1, seed).is_err());
    }

    #[test]
    fn experiment_config_survives_a_json_round_trip(
        reps in 1usize..1000, sizes in prop::collection::vec(1usize..2000, 0..5),
        k in 1usize..50, m in 0usize..4, seed: u64, trim_seed: Option<u64>, n_rct in 10usize..1000,
    ) {
        let mut cfg = ExperimentConfig {
            replications: reps,
            external_sizes: sizes,
            strategies: vec![Arm::TesPsMatching, Arm::RctOnly],
            k,
            m,
            master_seed: seed,
            ..Default::default()
        };
        cfg.dgp.n_rct = n_rct;
        if let Some(s) = trim_seed {
            cfg.trim_policy = TrimPolicy::Random { seed: s };
        }
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = parse_json(&text, "round trip").unwrap();
        prop_assert_eq!(back, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lasso_objective_never_rises_beyond_round_off(
        seed: u64, lambda in 0.001..1.0f64,
        cells in prop::collection::vec(-1.0..1.0f64, 30 * 6), noise in prop::collection::vec(-0.5..0.5f64, 30),
    ) {
        let (n, p) = (30, 6);
        let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { cells[i * p + j] });
        let y: Vec<f64> = (0..n).map(|i| 1.0 + 2.0 * x[(i, 1)] - x[(i, 4)] + noise[i]).collect();
        let config = LassoConfig { relaxed: false, ..LassoConfig::default().with_lambda(lambda).with_seed(seed) };
        let fit = fit_weighted_lasso(&x, &y, None, &config).unwrap();
        for t in fit.objective_trace.windows(2) {
            prop_assert!(t[1] <= t[0] + 1e-12 * t[0].abs().max(1.0), "{} -> {}", t[0], t[1]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn combined_estimate_is_pooled_minus_bias(seed in 0u64..1_000_000) {
        let fit = estimate_atmle(&small_pool(seed), &AtmleOptions::default().with_seed(seed)).unwrap();
        prop_assert_eq!(fit.combined.point, fit.pooled.point - fit.bias.point);
        for ((c, p), b) in fit.combined.eic.iter().zip(&fit.pooled.eic).zip(&fit.bias.eic) {
            prop_assert!((c - (p - b)).abs() <= 1e-12 * p.abs().max(b.abs()).max(1.0));
        }
    }

    #[test]
    fn matching_never_looks_at_outcomes(seed in 0u64..1_000_000, shift in -5.0..5.0f64) {
        let pool = small_pool(seed);
        let spec = MatchSpec { k: 5, ..Default::default() };
        let original = two_step_match(&pool, &spec, &BasisSpec::main_terms()).unwrap();
        let scrambled: Vec<Observation> = pool
            .rows()
            .iter()
            .enumerate()
            .map(|(i, o)| Observation { y: shift * (i % 7) as f64 - o.y, ..o.clone() })
            .collect();
        let scrambled = validate_cohort(scrambled, pool.randomization_prob()).unwrap();
        let rematched = two_step_match(&scrambled, &spec, &BasisSpec::main_terms()).unwrap();
        prop_assert_eq!(&original.selected_external, &rematched.selected_external);

        let target = original.selected_external.len() / 2;
        let trimmed = trim_to_size(&pool, &original, target, TrimPolicy::BestDistance).unwrap();
        prop_assert_eq!(trimmed.selected_external.len(), target);
        prop_assert!(trimmed.selected_external.iter().all(|i| original.selected_external.binary_search(i).is_ok()));
    }
}
