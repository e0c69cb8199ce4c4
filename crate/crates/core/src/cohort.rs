//! Observations, cohorts and their validation.
//!
//! Row order is significant: every index produced downstream (match sets,
//! per-row influence values) refers to a position in the validated cohort.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One unit record `(S, W, A, Y)` with an optional data-source label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Study indicator, 1 for trial participants.
    pub s: u8,
    pub w: Vec<f64>,
    pub a: u8,
    pub y: f64,
    pub source: Option<u32>,
}

impl Observation {
    pub fn new(s: u8, w: Vec<f64>, a: u8, y: f64) -> Self {
        Self {
            s,
            w,
            a,
            y,
            source: None,
        }
    }

    pub fn with_source(mut self, source: u32) -> Self {
        self.source = Some(source);
        self
    }

    pub fn is_rct(&self) -> bool {
        self.s == 1
    }

    pub fn treated(&self) -> bool {
        self.a == 1
    }
}

/// Row counts by `(s, a)` cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCounts {
    pub rct_control: usize,
    pub rct_treated: usize,
    pub external_control: usize,
    pub external_treated: usize,
}

impl CellCounts {
    fn tally(rows: &[Observation]) -> Self {
        let mut c = CellCounts::default();
        for o in rows {
            match (o.s, o.a) {
                (1, 1) => c.rct_treated += 1,
                (1, _) => c.rct_control += 1,
                (_, 1) => c.external_treated += 1,
                _ => c.external_control += 1,
            }
        }
        c
    }

    pub fn rct(&self) -> usize {
        self.rct_control + self.rct_treated
    }

    pub fn external(&self) -> usize {
        self.external_control + self.external_treated
    }
}

/// A validated pooled cohort of trial and external rows.
///
/// Immutable after construction; the trial randomization probability `r`
/// is part of the cohort because the trial treatment mechanism is known.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    rows: Vec<Observation>,
    d: usize,
    r: f64,
    counts: CellCounts,
}

/// Validate raw rows and build a [`Cohort`]. The covariate dimension is
/// taken from the first row.
pub fn validate_cohort(rows: Vec<Observation>, r: f64) -> Result<Cohort> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidRandomization(r));
    }
    let d = rows.first().ok_or(Error::EmptyCohort)?.w.len();
    for (i, o) in rows.iter().enumerate() {
        if o.w.len() != d {
            return Err(Error::DimensionMismatch {
                row: i,
                expected: d,
                found: o.w.len(),
            });
        }
        if o.s > 1 {
            return Err(Error::NonBinary {
                row: i,
                field: "S",
                value: o.s.to_string(),
            });
        }
        if o.a > 1 {
            return Err(Error::NonBinary {
                row: i,
                field: "A",
                value: o.a.to_string(),
            });
        }
        if !o.y.is_finite() {
            return Err(Error::NonFinite {
                row: i,
                field: "Y".into(),
            });
        }
        if let Some(j) = o.w.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: i,
                field: format!("W{}", j + 1),
            });
        }
    }
    let counts = CellCounts::tally(&rows);
    Ok(Cohort { rows, d, r, counts })
}

impl Cohort {
    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Covariate dimension.
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Known trial randomization probability `P(A=1 | S=1, W)`.
    pub fn randomization_prob(&self) -> f64 {
        self.r
    }

    pub fn counts(&self) -> CellCounts {
        self.counts
    }

    pub fn into_rows(self) -> Vec<Observation> {
        self.rows
    }

    pub fn covariates(&self) -> Vec<&[f64]> {
        self.rows.iter().map(|o| o.w.as_slice()).collect()
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.rows.iter().map(|o| o.y).collect()
    }

    pub fn treatments(&self) -> Vec<f64> {
        self.rows.iter().map(|o| o.a as f64).collect()
    }

    pub fn study(&self) -> Vec<f64> {
        self.rows.iter().map(|o| o.s as f64).collect()
    }

    /// New cohort made of the given row positions, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Cohort {
        let rows: Vec<Observation> = indices.iter().map(|&i| self.rows[i].clone()).collect();
        let counts = CellCounts::tally(&rows);
        Cohort {
            rows,
            d: self.d,
            r: self.r,
            counts,
        }
    }

    /// Fail unless both trial and external rows are present.
    pub fn require_both_groups(&self) -> Result<()> {
        if self.counts.rct() == 0 {
            return Err(Error::MissingStudyGroup("trial"));
        }
        if self.counts.external() == 0 {
            return Err(Error::MissingStudyGroup("external"));
        }
        Ok(())
    }
}

/// Positions of trial rows and of external rows, each in original order.
pub fn split_by_study(cohort: &Cohort) -> (Vec<usize>, Vec<usize>) {
    let mut rct = Vec::with_capacity(cohort.counts.rct());
    let mut external = Vec::with_capacity(cohort.counts.external());
    for (i, o) in cohort.rows.iter().enumerate() {
        if o.is_rct() {
            rct.push(i);
        } else {
            external.push(i);
        }
    }
    (rct, external)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(s: u8, a: u8, w: &[f64]) -> Observation {
        Observation::new(s, w.to_vec(), a, 1.0)
    }

    #[test]
    fn infers_dimension_and_counts() {
        let rows = vec![
            row(1, 0, &[0.0, 1.0, 2.0]),
            row(1, 1, &[0.0, 1.0, 2.0]),
            row(0, 0, &[0.0, 1.0, 2.0]),
            row(0, 1, &[0.0, 1.0, 2.0]),
        ];
        let c = validate_cohort(rows, 0.5).unwrap();
        assert_eq!(c.dim(), 3);
        assert_eq!(
            c.counts(),
            CellCounts {
                rct_control: 1,
                rct_treated: 1,
                external_control: 1,
                external_treated: 1
            }
        );
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let rows = vec![row(1, 0, &[0.0, 1.0, 2.0]), row(0, 0, &[0.0, 1.0])];
        match validate_cohort(rows, 0.5) {
            Err(Error::DimensionMismatch {
                row: 1,
                expected: 3,
                found: 2,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_boundary_randomization() {
        let rows = vec![row(1, 0, &[0.0])];
        assert!(matches!(
            validate_cohort(rows.clone(), 1.0),
            Err(Error::InvalidRandomization(_))
        ));
        assert!(validate_cohort(rows, 0.0).is_err());
    }

    #[test]
    fn rejects_non_binary_and_non_finite() {
        assert!(matches!(
            validate_cohort(vec![row(2, 0, &[0.0])], 0.5),
            Err(Error::NonBinary { field: "S", .. })
        ));
        assert!(matches!(
            validate_cohort(vec![row(1, 3, &[0.0])], 0.5),
            Err(Error::NonBinary { field: "A", .. })
        ));
        let mut bad = row(1, 0, &[f64::NAN]);
        assert!(matches!(
            validate_cohort(vec![bad.clone()], 0.5),
            Err(Error::NonFinite { .. })
        ));
        bad.w = vec![0.0];
        bad.y = f64::INFINITY;
        assert!(validate_cohort(vec![bad], 0.5).is_err());
        assert!(matches!(
            validate_cohort(vec![], 0.5),
            Err(Error::EmptyCohort)
        ));
    }

    #[test]
    fn split_preserves_order() {
        let c = validate_cohort(
            vec![row(1, 0, &[0.0]), row(0, 0, &[1.0]), row(1, 1, &[2.0])],
            0.5,
        )
        .unwrap();
        assert_eq!(split_by_study(&c), (vec![0, 2], vec![1]));

        let all_rct = validate_cohort(vec![row(1, 0, &[0.0]), row(1, 1, &[1.0])], 0.5).unwrap();
        assert_eq!(split_by_study(&all_rct), (vec![0, 1], vec![]));
        let all_ext = validate_cohort(vec![row(0, 0, &[0.0]), row(0, 1, &[1.0])], 0.5).unwrap();
        assert_eq!(split_by_study(&all_ext), (vec![], vec![0, 1]));
    }

    #[test]
    fn validation_is_idempotent() {
        let c = validate_cohort(
            vec![row(1, 0, &[0.0]), row(0, 1, &[1.0]), row(1, 1, &[2.0])],
            0.3,
        )
        .unwrap();
        let again = validate_cohort(c.rows().to_vec(), c.randomization_prob()).unwrap();
        assert_eq!(c, again);
    }
}
