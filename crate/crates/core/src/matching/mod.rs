//! Outcome-blind selection of external rows: trial-enrollment-score
//! matching, then propensity-score matching within the selected externals.
//!
//! Nothing in this module reads `Y`.

mod balance;
mod greedy;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cohort::{split_by_study, Cohort};
use crate::error::{Error, Result};
use crate::nuisance::{fit_logistic, predict_logistic, BasisSpec};
use crate::numeric::logit;
use crate::rng;

pub use balance::{balance_report, treatment_balance_report, BalanceReport};
use greedy::{greedy_match, GreedyOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoreScale {
    #[default]
    Logit,
    Probability,
}

impl ScoreScale {
    fn transform(self, p: f64) -> f64 {
        match self {
            ScoreScale::Logit => logit(p.clamp(1e-12, 1.0 - 1e-12)),
            ScoreScale::Probability => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchSpec {
    /// Externals matched to each trial row.
    pub k: usize,
    /// Controls matched to each selected external treated row; 0 skips the
    /// propensity stage.
    pub m: usize,
    pub score_scale: ScoreScale,
    pub replacement: bool,
    pub caliper: Option<f64>,
    pub target_external_n: Option<usize>,
}

impl Default for MatchSpec {
    fn default() -> Self {
        Self {
            k: 30,
            m: 1,
            score_scale: ScoreScale::Logit,
            replacement: false,
            caliper: None,
            target_external_n: None,
        }
    }
}

impl MatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidInput("k must be at least 1".into()));
        }
        if let Some(c) = self.caliper {
            if !(c > 0.0) {
                return Err(Error::InvalidInput("caliper must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStage {
    TesOnly,
    TesThenPs,
}

/// One anchor and the rows matched to it. In the enrollment stage the
/// anchor is a trial row and `members` are externals; in the propensity
/// stage the anchor is an external treated row, `members` starts with the
/// anchor itself followed by its controls.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchGroup {
    pub anchor: usize,
    pub members: Vec<usize>,
    /// Distance of each matched row to the anchor (the anchor itself
    /// contributes none).
    pub distances: Vec<f64>,
    /// Enrollment-stage distance of each member to its trial anchor.
    pub enrollment_distances: Vec<f64>,
}

impl MatchGroup {
    fn mean_distance(&self) -> f64 {
        if self.distances.is_empty() {
            0.0
        } else {
            self.distances.iter().sum::<f64>() / self.distances.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    /// Selected external rows (cohort positions), ascending and distinct.
    pub selected_external: Vec<usize>,
    pub groups: Vec<MatchGroup>,
    pub stage: MatchStage,
    /// Anchors that received fewer matches than requested, with the count
    /// they did receive.
    pub shortfalls: Vec<(usize, usize)>,
    /// Propensity-stage treated rows dropped for lack of controls.
    pub dropped: Vec<usize>,
    pub balance_before: BalanceReport,
    pub balance_after: BalanceReport,
}

impl MatchResult {
    pub fn pair_distances(&self) -> Vec<f64> {
        self.groups
            .iter()
            .flat_map(|g| g.distances.iter().copied())
            .collect()
    }

    /// Trial rows followed by the selected externals.
    pub fn analysis_rows(&self, cohort: &Cohort) -> Vec<usize> {
        let (rct, _) = split_by_study(cohort);
        rct.into_iter()
            .chain(self.selected_external.iter().copied())
            .collect()
    }
}

/// External rows passing a covariate-only eligibility predicate, in their
/// original order.
pub fn apply_eligibility_filter(
    cohort: &Cohort,
    external_rows: &[usize],
    predicate: impl Fn(&[f64]) -> bool,
) -> Vec<usize> {
    external_rows
        .iter()
        .copied()
        .filter(|&i| predicate(&cohort.rows()[i].w))
        .collect()
}

/// Fitted `P(S=1 | W)` for every cohort row from a logistic regression of
/// `S` on `φ(W)` over all rows.
pub fn fit_enrollment_score(cohort: &Cohort, basis: &BasisSpec) -> Result<Vec<f64>> {
    cohort.require_both_groups()?;
    let w = cohort.covariates();
    let b = basis.fit(&w);
    let x = b.design(&w, &[]);
    let fit = fit_logistic(&x, &cohort.study(), None)?;
    Ok(predict_logistic(&x, &fit.beta))
}

/// Logistic `A ~ [1, W]` refit on `rows` only, predicted for every cohort
/// row.
pub fn refit_external_propensity(cohort: &Cohort, rows: &[usize]) -> Result<Vec<f64>> {
    let treated = rows.iter().filter(|&&i| cohort.rows()[i].treated()).count();
    if treated == 0 || treated == rows.len() {
        return Err(Error::SingleArm("selected external rows"));
    }
    let sub_w: Vec<&[f64]> = rows
        .iter()
        .map(|&i| cohort.rows()[i].w.as_slice())
        .collect();
    let a: Vec<f64> = rows.iter().map(|&i| cohort.rows()[i].a as f64).collect();
    let basis = BasisSpec::main_terms().fit(&sub_w);
    let fit = fit_logistic(&basis.design(&sub_w, &[]), &a, None)?;
    let x = basis.design(&cohort.covariates(), &[]);
    Ok(predict_logistic(&x, &fit.beta))
}

fn sorted_unique(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v.dedup();
    v
}

fn with_trial_rows(cohort: &Cohort, external: &[usize]) -> Vec<usize> {
    let (rct, _) = split_by_study(cohort);
    rct.into_iter().chain(external.iter().copied()).collect()
}

/// Stage 1 over every external row of the cohort.
pub fn match_trial_enrollment(
    cohort: &Cohort,
    q_hat: &[f64],
    spec: &MatchSpec,
) -> Result<MatchResult> {
    let (_, ext) = split_by_study(cohort);
    match_trial_enrollment_among(cohort, q_hat, &ext, spec)
}

/// Greedy 1:k nearest-neighbour matching of each trial row to externals
/// drawn from `pool` on the (transformed) enrollment score.
pub fn match_trial_enrollment_among(
    cohort: &Cohort,
    q_hat: &[f64],
    pool: &[usize],
    spec: &MatchSpec,
) -> Result<MatchResult> {
    spec.validate()?;
    if q_hat.len() != cohort.len() {
        return Err(Error::InvalidInput(format!(
            "{} enrollment scores for {} rows",
            q_hat.len(),
            cohort.len()
        )));
    }
    let (rct, _) = split_by_study(cohort);
    if rct.is_empty() {
        return Err(Error::MissingStudyGroup("trial"));
    }
    if pool.is_empty() {
        return Err(Error::MissingStudyGroup("external"));
    }
    if let Some(&i) = pool.iter().find(|&&i| cohort.rows()[i].is_rct()) {
        return Err(Error::InvalidInput(format!("pool row {i} is a trial row")));
    }
    let needed = spec.k * rct.len();
    if !spec.replacement && pool.len() < needed {
        return Err(Error::PoolExhausted {
            needed,
            available: pool.len(),
        });
    }
    let scale = spec.score_scale;
    let anchors: Vec<(f64, usize)> = rct
        .iter()
        .map(|&i| (scale.transform(q_hat[i]), i))
        .collect();
    let candidates: Vec<(f64, usize)> = pool
        .iter()
        .map(|&i| (scale.transform(q_hat[i]), i))
        .collect();
    let matched = greedy_match(
        &anchors,
        &candidates,
        &GreedyOptions {
            per_anchor: spec.k,
            replacement: spec.replacement,
            caliper: spec.caliper,
            all_or_nothing: false,
        },
    );

    let mut groups = Vec::with_capacity(matched.len());
    let mut shortfalls = Vec::new();
    let mut selected = Vec::new();
    for am in matched {
        if am.matches.len() < spec.k {
            shortfalls.push((am.anchor, am.matches.len()));
        }
        selected.extend(am.matches.iter().map(|m| m.0));
        groups.push(MatchGroup {
            anchor: am.anchor,
            members: am.matches.iter().map(|m| m.0).collect(),
            distances: am.matches.iter().map(|m| m.1).collect(),
            enrollment_distances: am.matches.iter().map(|m| m.1).collect(),
        });
    }
    let selected = sorted_unique(selected);
    if selected.is_empty() {
        return Err(Error::MissingStudyGroup("matched external"));
    }
    Ok(MatchResult {
        balance_before: balance_report(cohort, &with_trial_rows(cohort, pool))?,
        balance_after: balance_report(cohort, &with_trial_rows(cohort, &selected))?,
        selected_external: selected,
        groups,
        stage: MatchStage::TesOnly,
        shortfalls,
        dropped: Vec::new(),
    })
}

/// Stage 2: greedy 1:m matching, on the logit scale and without
/// replacement, of each external treated row in `stage1` to external
/// controls in `stage1`, using propensity scores `e_hat` (indexed by cohort
/// row). Treated rows that cannot receive `m` controls are dropped.
pub fn match_propensity(
    cohort: &Cohort,
    stage1: &MatchResult,
    e_hat: &[f64],
    m: usize,
) -> Result<MatchResult> {
    if m == 0 {
        return Err(Error::InvalidInput(
            "propensity matching needs m >= 1".into(),
        ));
    }
    if e_hat.len() != cohort.len() {
        return Err(Error::InvalidInput(format!(
            "{} propensity scores for {} rows",
            e_hat.len(),
            cohort.len()
        )));
    }
    let scale = ScoreScale::Logit;
    let mut treated = Vec::new();
    let mut controls = Vec::new();
    for &i in &stage1.selected_external {
        let s = scale.transform(e_hat[i]);
        if cohort.rows()[i].treated() {
            treated.push((s, i));
        } else {
            controls.push((s, i));
        }
    }
    if treated.is_empty() || controls.is_empty() {
        return Err(Error::SingleArm("selected external rows"));
    }
    let matched = greedy_match(
        &treated,
        &controls,
        &GreedyOptions {
            per_anchor: m,
            replacement: false,
            caliper: None,
            all_or_nothing: true,
        },
    );
    let mut stage1_distance = std::collections::HashMap::new();
    for g in &stage1.groups {
        for (&row, &d) in g.members.iter().zip(&g.enrollment_distances) {
            let e = stage1_distance.entry(row).or_insert(d);
            *e = f64::min(*e, d);
        }
    }
    let mut groups = Vec::new();
    let mut dropped = Vec::new();
    let mut selected = Vec::new();
    for am in matched {
        if am.matches.is_empty() {
            dropped.push(am.anchor);
            continue;
        }
        let mut members = vec![am.anchor];
        members.extend(am.matches.iter().map(|x| x.0));
        selected.extend(members.iter().copied());
        let enrollment_distances = members
            .iter()
            .map(|r| stage1_distance.get(r).copied().unwrap_or(0.0))
            .collect();
        groups.push(MatchGroup {
            anchor: am.anchor,
            members,
            distances: am.matches.iter().map(|x| x.1).collect(),
            enrollment_distances,
        });
    }
    if !dropped.is_empty() {
        log::warn!(
            "{} external treated rows dropped for lack of controls",
            dropped.len()
        );
    }
    let selected = sorted_unique(selected);
    if selected.is_empty() {
        return Err(Error::SingleArm("propensity-matched rows"));
    }
    Ok(MatchResult {
        balance_before: stage1.balance_before.clone(),
        balance_after: balance_report(cohort, &with_trial_rows(cohort, &selected))?,
        selected_external: selected,
        groups,
        stage: MatchStage::TesThenPs,
        shortfalls: stage1.shortfalls.clone(),
        dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TrimPolicy {
    #[default]
    BestDistance,
    Random {
        seed: u64,
    },
}

/// A unit of trimming: a whole propensity group, or a single external row
/// with its enrollment-stage distance.
struct TrimUnit {
    group: MatchGroup,
    rank_distance: f64,
}

fn trim_units(result: &MatchResult) -> Vec<TrimUnit> {
    match result.stage {
        MatchStage::TesThenPs => result
            .groups
            .iter()
            .map(|g| TrimUnit {
                group: g.clone(),
                rank_distance: g.mean_distance(),
            })
            .collect(),
        MatchStage::TesOnly => {
            // with replacement a row can sit in several groups; keep its
            // closest match
            let mut best: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
            for g in &result.groups {
                for (&row, &d) in g.members.iter().zip(&g.distances) {
                    let e = best.entry(row).or_insert((d, g.anchor));
                    if d < e.0 {
                        *e = (d, g.anchor);
                    }
                }
            }
            best.into_iter()
                .map(|(row, (d, anchor))| TrimUnit {
                    group: MatchGroup {
                        anchor,
                        members: vec![row],
                        distances: vec![d],
                        enrollment_distances: vec![d],
                    },
                    rank_distance: d,
                })
                .collect()
        }
    }
}

/// Reduce a match to exactly `target` external rows. Units (propensity
/// groups, or single rows after the enrollment stage) are kept in order of
/// increasing distance, or in seeded random order; the last unit is cut
/// short when needed to land on `target` exactly.
pub fn trim_to_size(
    cohort: &Cohort,
    result: &MatchResult,
    target: usize,
    policy: TrimPolicy,
) -> Result<MatchResult> {
    let available = result.selected_external.len();
    if target > available {
        return Err(Error::TargetTooLarge { target, available });
    }
    if target == available {
        return Ok(result.clone());
    }
    let mut units = trim_units(result);
    match policy {
        TrimPolicy::BestDistance => units.sort_by(|a, b| {
            a.rank_distance
                .total_cmp(&b.rank_distance)
                .then(a.group.members[0].cmp(&b.group.members[0]))
        }),
        TrimPolicy::Random { seed } => units.shuffle(&mut rng::stream(seed, &[0x7219])),
    }

    let mut kept: Vec<MatchGroup> = Vec::new();
    let mut selected = Vec::with_capacity(target);
    for TrimUnit { mut group, .. } in units {
        if selected.len() == target {
            break;
        }
        let room = target - selected.len();
        if group.members.len() > room {
            group.members.truncate(room);
            group.enrollment_distances.truncate(room);
            // propensity-stage distances belong to members after the anchor
            let nd = match result.stage {
                MatchStage::TesThenPs => room - 1,
                MatchStage::TesOnly => room,
            };
            group.distances.truncate(nd);
        }
        selected.extend(group.members.iter().copied());
        kept.push(group);
    }
    if result.stage == MatchStage::TesOnly {
        // regroup single rows under their trial anchors
        let mut by_anchor: std::collections::BTreeMap<usize, MatchGroup> = Default::default();
        for g in kept {
            let e = by_anchor.entry(g.anchor).or_insert_with(|| MatchGroup {
                anchor: g.anchor,
                members: Vec::new(),
                distances: Vec::new(),
                enrollment_distances: Vec::new(),
            });
            e.members.extend(g.members);
            e.distances.extend(g.distances);
            e.enrollment_distances.extend(g.enrollment_distances);
        }
        kept = by_anchor.into_values().collect();
    }
    let selected = sorted_unique(selected);
    Ok(MatchResult {
        balance_before: result.balance_before.clone(),
        balance_after: balance_report(cohort, &with_trial_rows(cohort, &selected))?,
        selected_external: selected,
        groups: kept,
        stage: result.stage,
        shortfalls: result.shortfalls.clone(),
        dropped: result.dropped.clone(),
    })
}

/// Enrollment-score matching, then (for `m > 0`) propensity matching with
/// the propensity refit on the stage-1 selection, then trimming to
/// `target_external_n` (at most the matched size) by distance.
pub fn two_step_match(
    cohort: &Cohort,
    spec: &MatchSpec,
    score_basis: &BasisSpec,
) -> Result<MatchResult> {
    let q_hat = fit_enrollment_score(cohort, score_basis)?;
    let stage1 = match_trial_enrollment(cohort, &q_hat, spec)?;
    let matched = if spec.m > 0 {
        let e_hat = refit_external_propensity(cohort, &stage1.selected_external)?;
        match_propensity(cohort, &stage1, &e_hat, spec.m)?
    } else {
        stage1
    };
    match spec.target_external_n {
        Some(n) => {
            let n = n.min(matched.selected_external.len());
            trim_to_size(cohort, &matched, n, TrimPolicy::BestDistance)
        }
        None => Ok(matched),
    }
}

/// Uniform sample of `n` rows from `pool` without replacement, returned in
/// ascending order.
pub fn sample_random(pool: &[usize], n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > pool.len() {
        return Err(Error::TargetTooLarge {
            target: n,
            available: pool.len(),
        });
    }
    let mut r = rng::stream(seed, &[0x5a4d]);
    let picks = rand::seq::index::sample(&mut r, pool.len(), n);
    Ok(sorted_unique(picks.into_iter().map(|k| pool[k]).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{validate_cohort, Observation};

    fn grid_cohort() -> Cohort {
        let mut rows = Vec::new();
        for i in 0..20 {
            let x = i as f64 / 10.0 - 1.0;
            rows.push(Observation::new(
                1,
                vec![x, (i % 3) as f64],
                (i % 2) as u8,
                0.0,
            ));
        }
        for i in 0..60 {
            let x = i as f64 / 20.0 - 1.2;
            rows.push(Observation::new(
                0,
                vec![x, (i % 4) as f64],
                ((i / 3) % 2) as u8,
                1.0,
            ));
        }
        validate_cohort(rows, 0.5).unwrap()
    }

    #[test]
    fn eligibility_examples() {
        let rows = vec![
            Observation::new(0, vec![-1.0], 0, 0.0),
            Observation::new(0, vec![0.0], 0, 0.0),
            Observation::new(0, vec![2.0], 0, 0.0),
        ];
        let c = validate_cohort(rows, 0.5).unwrap();
        let all = [0, 1, 2];
        assert_eq!(apply_eligibility_filter(&c, &all, |_| true), vec![0, 1, 2]);
        assert!(apply_eligibility_filter(&c, &all, |_| false).is_empty());
        assert_eq!(
            apply_eligibility_filter(&c, &all, |w| w[0] >= 0.0),
            vec![1, 2]
        );
    }

    #[test]
    fn two_nearest_on_probability_scale() {
        let rows = vec![
            Observation::new(1, vec![0.0], 0, 0.0),
            Observation::new(1, vec![0.1], 1, 0.0),
            Observation::new(0, vec![0.2], 0, 0.0),
            Observation::new(0, vec![0.3], 1, 0.0),
            Observation::new(0, vec![0.4], 0, 0.0),
            Observation::new(0, vec![0.5], 1, 0.0),
        ];
        let c = validate_cohort(rows, 0.5).unwrap();
        let q = [0.5, 0.99, 0.40, 0.45, 0.90, 0.0];
        let spec = MatchSpec {
            k: 2,
            m: 0,
            score_scale: ScoreScale::Probability,
            replacement: true,
            ..Default::default()
        };
        let res = match_trial_enrollment_among(&c, &q, &[2, 3, 4], &spec).unwrap();
        let g = res.groups.iter().find(|g| g.anchor == 0).unwrap();
        assert_eq!(g.members, vec![3, 2]);
    }

    #[test]
    fn pool_exhaustion_is_reported() {
        let c = grid_cohort();
        let q = vec![0.3; c.len()];
        let spec = MatchSpec {
            k: 4,
            ..Default::default()
        };
        match match_trial_enrollment(&c, &q, &spec) {
            Err(Error::PoolExhausted {
                needed: 80,
                available: 60,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn logit_nearest_two_controls() {
        let rows = vec![
            Observation::new(1, vec![0.0], 0, 0.0),
            Observation::new(1, vec![1.0], 1, 0.0),
            Observation::new(0, vec![0.0], 1, 0.0),
            Observation::new(0, vec![0.1], 0, 0.0),
            Observation::new(0, vec![0.2], 0, 0.0),
            Observation::new(0, vec![0.3], 0, 0.0),
        ];
        let c = validate_cohort(rows, 0.5).unwrap();
        let stage1 = match_trial_enrollment(
            &c,
            &[0.5; 6],
            &MatchSpec {
                k: 2,
                m: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let e = [0.5, 0.5, 0.30, 0.10, 0.29, 0.31];
        let res = match_propensity(&c, &stage1, &e, 2).unwrap();
        assert_eq!(res.groups.len(), 1);
        let mut members = res.groups[0].members.clone();
        members.sort();
        assert_eq!(members, vec![2, 4, 5]);
    }

    #[test]
    fn trim_best_distance_keeps_closest_pairs() {
        let c = grid_cohort();
        let (_, ext) = split_by_study(&c);
        let groups: Vec<MatchGroup> = [0.3, 0.1, 0.4, 0.2]
            .iter()
            .enumerate()
            .map(|(k, &d)| MatchGroup {
                anchor: ext[2 * k],
                members: vec![ext[2 * k], ext[2 * k + 1]],
                distances: vec![d],
                enrollment_distances: vec![0.0, 0.0],
            })
            .collect();
        let selected = sorted_unique(groups.iter().flat_map(|g| g.members.clone()).collect());
        let bal = balance_report(&c, &with_trial_rows(&c, &selected)).unwrap();
        let res = MatchResult {
            selected_external: selected,
            groups,
            stage: MatchStage::TesThenPs,
            shortfalls: vec![],
            dropped: vec![],
            balance_before: bal.clone(),
            balance_after: bal,
        };
        let same = trim_to_size(&c, &res, 8, TrimPolicy::BestDistance).unwrap();
        assert_eq!(same, res);
        let t = trim_to_size(&c, &res, 4, TrimPolicy::BestDistance).unwrap();
        assert_eq!(t.selected_external, vec![ext[2], ext[3], ext[6], ext[7]]);
        let odd = trim_to_size(&c, &res, 3, TrimPolicy::BestDistance).unwrap();
        assert_eq!(odd.selected_external.len(), 3);
        assert!(matches!(
            trim_to_size(&c, &res, 9, TrimPolicy::BestDistance),
            Err(Error::TargetTooLarge { .. })
        ));
        let r1 = trim_to_size(&c, &res, 4, TrimPolicy::Random { seed: 3 }).unwrap();
        let r2 = trim_to_size(&c, &res, 4, TrimPolicy::Random { seed: 3 }).unwrap();
        assert_eq!(r1.selected_external, r2.selected_external);
    }

    #[test]
    fn sample_random_examples() {
        let pool: Vec<usize> = (10..30).rev().collect();
        let all = sample_random(&pool, 20, 1).unwrap();
        assert_eq!(all, (10..30).collect::<Vec<_>>());
        assert!(sample_random(&pool, 0, 1).unwrap().is_empty());
        assert_eq!(
            sample_random(&pool, 7, 5).unwrap(),
            sample_random(&pool, 7, 5).unwrap()
        );
        assert!(sample_random(&pool, 21, 1).is_err());
    }
}
