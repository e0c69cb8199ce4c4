use atmle::estimators::{
    estimate_aipw, estimate_atmle, estimate_atmle_with_bundle, estimate_pooled_projection,
    estimate_tmle_rct, AtmleOptions,
};
use atmle::nuisance::{
    build_nuisance_bundle, BasisSpec, LassoConfig, NuisanceBundle, OutcomeModel, ScoreModel,
    TreatmentTerms,
};
use atmle::simulation::{generate_pool, DgpConfig};
use atmle::{validate_cohort, Cohort, Error, Observation};
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn sim_cohort(seed: u64, n_rct: usize, per_source: usize) -> Cohort {
    generate_pool(&DgpConfig {
        n_rct,
        source_sizes: vec![per_source; 5],
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn with_outcomes(c: &Cohort, f: impl Fn(usize, &Observation) -> f64) -> Cohort {
    let rows = c
        .rows()
        .iter()
        .enumerate()
        .map(|(i, o)| Observation {
            y: f(i, o),
            ..o.clone()
        })
        .collect();
    validate_cohort(rows, c.randomization_prob()).unwrap()
}

/// 30 rows cycling through every (S, W, A) cell with a binary covariate.
fn enumerated_cohort() -> Cohort {
    let rows = (0..30)
        .map(|i| {
            let s = (i % 2) as u8;
            let w = ((i / 2) % 2) as f64;
            let a = ((i / 4) % 2) as u8;
            let y =
                1.0 + 0.7 * w + 0.4 * a as f64 + (1.0 - s as f64) * 0.3 + (i as f64 * 1.7).sin();
            Observation::new(s, vec![w], a, y)
        })
        .collect();
    validate_cohort(rows, 0.5).unwrap()
}

fn enumerated_bundle(c: &Cohort) -> NuisanceBundle {
    NuisanceBundle::from_models(
        c,
        ScoreModel::oracle(|w| 0.35 + 0.2 * w[0]),
        ScoreModel::oracle(|w| 0.4 - 0.15 * w[0]),
        OutcomeModel::oracle(|w, _| 1.2 + 0.5 * w[0]),
    )
    .unwrap()
}

fn unpenalized_options() -> AtmleOptions {
    AtmleOptions {
        lasso: LassoConfig::default().with_lambda(0.0),
        bias_basis: BasisSpec::main_terms().with_treatment(TreatmentTerms::Interacted),
        ..Default::default()
    }
}

/// Cell-by-cell R-learner solution: within a saturated cell the weighted
/// least squares slope is `Σ f·p / Σ f²`.
fn cell_slope(rows: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (num, den) = rows.fold((0.0, 0.0), |(n, d), (f, p)| (n + f * p, d + f * f));
    num / den
}

#[test]
fn saturated_cells_match_enumeration_oracle() {
    let c = enumerated_cohort();
    let bundle = enumerated_bundle(&c);
    let res = estimate_atmle_with_bundle(&c, bundle.clone(), &unpenalized_options()).unwrap();

    let n = c.len() as f64;
    let r = 0.5;
    let obs = c.rows();
    let q = |w: f64| 0.35 + 0.2 * w;
    let e = |w: f64| 0.4 - 0.15 * w;
    let theta = |w: f64| 1.2 + 0.5 * w;
    let g = |w: f64| r * q(w) + e(w) * (1.0 - q(w));
    let pi = |w: f64, a: f64| {
        let (pt, pe) = if a == 1.0 {
            (r, e(w))
        } else {
            (1.0 - r, 1.0 - e(w))
        };
        pt * q(w) / (pt * q(w) + pe * (1.0 - q(w)))
    };

    // pooled: one slope per covariate cell
    let tau_a = |w: f64| {
        cell_slope(
            obs.iter()
                .filter(|o| o.w[0] == w)
                .map(|o| (o.a as f64 - g(w), o.y - theta(w))),
        )
    };
    let (t0, t1) = (tau_a(0.0), tau_a(1.0));
    let tau_at = |w: f64| if w == 1.0 { t1 } else { t0 };
    let pooled: f64 = obs.iter().map(|o| tau_at(o.w[0])).sum::<f64>() / n;
    assert!(
        (res.pooled.point - pooled).abs() < 1e-10,
        "{} vs {pooled}",
        res.pooled.point
    );

    // bias: one slope per (W, A) cell
    let qbar = |w: f64, a: f64| theta(w) + (a - g(w)) * tau_at(w);
    let tau_s = |w: f64, a: f64| {
        cell_slope(
            obs.iter()
                .filter(|o| o.w[0] == w && o.a as f64 == a)
                .map(|o| (o.s as f64 - pi(w, a), o.y - qbar(w, a))),
        )
    };
    let mut bias = 0.0;
    for o in obs {
        let (w, a, s) = (o.w[0], o.a as f64, o.s as f64);
        let plug = (1.0 - pi(w, 0.0)) * tau_s(w, 0.0) - (1.0 - pi(w, 1.0)) * tau_s(w, 1.0);
        let h = a / g(w) * tau_s(w, 1.0) - (1.0 - a) / (1.0 - g(w)) * tau_s(w, 0.0);
        bias += plug + h * (s - pi(w, a));
    }
    bias /= n;
    assert!(
        (res.bias.point - bias).abs() < 1e-10,
        "{} vs {bias}",
        res.bias.point
    );
    assert!((res.combined.point - (pooled - bias)).abs() < 1e-10);
}

#[test]
fn decomposition_and_centred_influence_curves() {
    let c = sim_cohort(11, 300, 80);
    let res = estimate_atmle(&c, &AtmleOptions::default()).unwrap();
    assert!((res.combined.point - (res.pooled.point - res.bias.point)).abs() <= 1e-12);
    for (i, v) in res.combined.eic.iter().enumerate() {
        assert!((v - (res.pooled.eic[i] - res.bias.eic[i])).abs() <= 1e-12);
    }
    for est in [&res.pooled, &res.bias, &res.combined] {
        let m = est.eic.iter().sum::<f64>() / est.eic.len() as f64;
        assert!(m.abs() < 1e-10, "eic mean {m}");
        assert!(est.se > 0.0 && est.ci_lo < est.point && est.point < est.ci_hi);
    }
}

#[test]
fn pooled_fit_solves_its_score_equations() {
    let c = sim_cohort(12, 300, 80);
    let opts = AtmleOptions::default();
    let bundle = build_nuisance_bundle(&c, &opts.nuisance).unwrap();
    let (_, fit) =
        estimate_pooled_projection(&c, &bundle, &opts.cate_basis, &opts.lasso, 0.05).unwrap();
    let nu = bundle.rows();
    let n = c.len() as f64;
    for &j in &fit.fit.selected {
        let mut score = 0.0;
        for (i, o) in c.rows().iter().enumerate() {
            let f = o.a as f64 - nu.g[i];
            let phi = fit.basis.eval(&o.w, 0.0);
            score += f * phi[j] * (o.y - nu.theta[i] - f * fit.predict(&o.w, 0.0));
        }
        assert!((score / n).abs() <= 1e-8, "column {j}: {}", score / n);
    }
}

#[test]
fn constant_outcome_gives_zero_effects() {
    let c = with_outcomes(&sim_cohort(13, 200, 60), |_, _| 3.0);
    let res = estimate_atmle(&c, &AtmleOptions::default()).unwrap();
    for est in [&res.pooled, &res.bias, &res.combined] {
        assert!(est.point.abs() < 1e-10, "{}", est.point);
    }
}

#[test]
fn outcome_shift_leaves_estimates_unchanged() {
    let c = sim_cohort(14, 250, 60);
    let shifted = with_outcomes(&c, |_, o| o.y + 10.0);
    let opts = AtmleOptions::default();
    let a = estimate_atmle(&c, &opts).unwrap();
    let b = estimate_atmle(&shifted, &opts).unwrap();
    assert!((a.combined.point - b.combined.point).abs() < 1e-8);
    assert!((a.combined.se - b.combined.se).abs() < 1e-8);
}

#[test]
fn forced_trial_only_enrollment_collapses_to_pooled() {
    let c = sim_cohort(15, 250, 60);
    let opts = AtmleOptions::default();
    let bundle = build_nuisance_bundle(&c, &opts.nuisance)
        .unwrap()
        .force_trial_only_enrollment();
    let res = estimate_atmle_with_bundle(&c, bundle, &opts).unwrap();
    assert_eq!(res.bias.point, 0.0);
    assert!(res.bias.eic.iter().all(|&v| v == 0.0));
    assert_eq!(res.combined.point, res.pooled.point);
    assert_eq!(res.combined.eic, res.pooled.eic);
}

#[test]
fn unbiased_unshifted_externals_recover_the_effect() {
    let c = generate_pool(&DgpConfig {
        n_rct: 2000,
        source_sizes: vec![8000, 0, 0, 0, 0],
        seed: 16,
        ..Default::default()
    })
    .unwrap();
    let opts = AtmleOptions::default();
    let bundle = build_nuisance_bundle(&c, &opts.nuisance).unwrap();
    let (est, _) =
        estimate_pooled_projection(&c, &bundle, &opts.cate_basis, &opts.lasso, 0.05).unwrap();
    assert!(
        (est.point - 0.5).abs() < 3.0 * est.se,
        "{} ± {}",
        est.point,
        est.se
    );
}

#[test]
fn bias_projection_tracks_integrated_external_bias() {
    // trial and external covariates share N(0, 1); external treatment is a
    // coin with P(A=1) = 0.3 and outcomes carry the worst source's shift
    let (n_rct, n_ext, e) = (20_000usize, 30_000usize, 0.3);
    let b = |w: &[f64], a: f64| 1.3 + 1.4 * w[0] * a + 0.2 * w[2];
    let mean_y = |w: &[f64], a: f64| 2.5 + 0.9 * w[0] + 1.1 * w[1] + 2.7 * w[2] + 0.5 * a;
    let mut rng = atmle::rng::stream(17, &[]);
    let noise = Normal::new(0.0, 3.0).unwrap();
    let mut rows = Vec::new();
    for i in 0..n_rct + n_ext {
        let w: Vec<f64> = (0..3)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let trial = i < n_rct;
        let a = if trial {
            rng.gen_bool(0.5)
        } else {
            rng.gen_bool(e)
        } as u8;
        let shift = if trial { 0.0 } else { b(&w, a as f64) };
        let y = mean_y(&w, a as f64) + shift + noise.sample(&mut rng);
        rows.push(Observation::new(u8::from(trial), w, a, y));
    }
    let c = validate_cohort(rows, 0.5).unwrap();
    let opts = AtmleOptions {
        bias_basis: BasisSpec::main_terms().with_treatment(TreatmentTerms::Interacted),
        ..Default::default()
    };
    let res = estimate_atmle(&c, &opts).unwrap();

    // E[Π(0|W,0)τ_S(W,0) - Π(0|W,1)τ_S(W,1)] with τ_S = -b and constant Π
    let q = n_rct as f64 / (n_rct + n_ext) as f64;
    let pi1 = |a: f64| {
        let (pt, pe) = if a == 1.0 { (0.5, e) } else { (0.5, 1.0 - e) };
        pt * q / (pt * q + pe * (1.0 - q))
    };
    let mut mc = atmle::rng::stream(18, &[]);
    let draws = 1_000_000;
    let mut acc = 0.0;
    for _ in 0..draws {
        let w: Vec<f64> = (0..3)
            .map(|_| mc.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        acc += (1.0 - pi1(0.0)) * -b(&w, 0.0) - (1.0 - pi1(1.0)) * -b(&w, 1.0);
    }
    let truth = acc / draws as f64;
    assert!(
        (res.bias.point - truth).abs() < 3.0 * res.bias.se,
        "{} ± {} vs {truth}",
        res.bias.point,
        res.bias.se
    );
}

#[test]
fn aipw_matches_hand_computation() {
    let rows = vec![
        Observation::new(1, vec![0.0], 1, 2.0),
        Observation::new(1, vec![0.0], 0, 0.0),
        Observation::new(1, vec![1.0], 1, 1.0),
        Observation::new(1, vec![1.0], 0, 3.0),
    ];
    let c = validate_cohort(rows, 0.5).unwrap();
    let est = estimate_aipw(&c, &|w, a| w[0] + a, &[0.5; 4], 0.05).unwrap();
    // plug-in 1 on every row; augmentation 2, 0, -2, -4
    assert!(est.point.abs() < 1e-15);
    assert_eq!(est.eic, vec![3.0, 1.0, -1.0, -3.0]);
    assert!((est.se - (20.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-12);
}

#[test]
fn aipw_reports_positivity_rows() {
    let c = validate_cohort(
        vec![
            Observation::new(1, vec![0.0], 1, 2.0),
            Observation::new(1, vec![0.0], 0, 0.0),
        ],
        0.5,
    )
    .unwrap();
    match estimate_aipw(&c, &|_, _| 0.0, &[0.5, 0.999], 0.05) {
        Err(Error::Positivity { rows }) => assert_eq!(rows, vec![1]),
        other => panic!("expected positivity error, got {other:?}"),
    }
}

#[test]
fn trial_tmle_is_exact_when_outcome_is_treatment() {
    let c = sim_cohort(19, 200, 10);
    let c = with_outcomes(&c, |_, o| o.a as f64);
    let basis = BasisSpec::main_terms().with_treatment(TreatmentTerms::Interacted);
    let est = estimate_tmle_rct(&c, &basis, &LassoConfig::default(), 0.05).unwrap();
    assert!((est.point - 1.0).abs() < 1e-9, "{}", est.point);
    assert!(est.se < 1e-9);
}

#[test]
fn trial_tmle_ignores_external_rows() {
    let c = sim_cohort(20, 200, 50);
    let (rct, _) = atmle::cohort::split_by_study(&c);
    let basis = BasisSpec::main_terms().with_treatment(TreatmentTerms::Interacted);
    let lasso = LassoConfig::default();
    let full = estimate_tmle_rct(&c, &basis, &lasso, 0.05).unwrap();
    let trial = estimate_tmle_rct(&c.subset(&rct), &basis, &lasso, 0.05).unwrap();
    assert_eq!(full, trial);
}

#[test]
fn preconditions_are_reported() {
    let c = sim_cohort(21, 100, 20);
    let (rct, ext) = atmle::cohort::split_by_study(&c);
    let trial_only = c.subset(&rct);
    assert!(matches!(
        estimate_atmle(&trial_only, &AtmleOptions::default()),
        Err(Error::MissingStudyGroup("external"))
    ));
    let treated: Vec<usize> = rct
        .iter()
        .copied()
        .filter(|&i| c.rows()[i].a == 1)
        .collect();
    let basis = BasisSpec::main_terms();
    assert!(matches!(
        estimate_tmle_rct(&c.subset(&treated), &basis, &LassoConfig::default(), 0.05),
        Err(Error::SingleArm(_))
    ));
    assert!(matches!(
        estimate_tmle_rct(&c.subset(&ext), &basis, &LassoConfig::default(), 0.05),
        Err(Error::MissingStudyGroup("trial"))
    ));
}
