//! Covariate balance between study groups (or treatment arms).

use serde::Serialize;

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::nuisance::{fit_logistic, BasisSpec};
use crate::numeric::{mean, sample_var};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceReport {
    /// Non-intercept coefficients of the logistic refit on `[1, W]`.
    pub refit_coefs: Vec<f64>,
    pub max_abs_coef: f64,
    /// Standardized mean differences, label-1 group minus label-0 group.
    pub smd: Vec<f64>,
    /// The refit separated the groups; `refit_coefs` is empty and
    /// `max_abs_coef` is infinite.
    pub separated: bool,
    pub n_label1: usize,
    pub n_label0: usize,
}

impl BalanceReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let coefs = if self.separated {
            "separated".to_string()
        } else {
            fmt_list(&self.refit_coefs)
        };
        s.push_str(&format!("n = {} vs {}\n", self.n_label1, self.n_label0));
        s.push_str(&format!("refit coefficients: {coefs}\n"));
        s.push_str(&format!("max |coef|: {}\n", self.max_abs_coef));
        s.push_str(&format!("SMD: {}\n", fmt_list(&self.smd)));
        s
    }
}

fn fmt_list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

fn report(cohort: &Cohort, rows: &[usize], label: impl Fn(usize) -> bool) -> Result<BalanceReport> {
    let d = cohort.dim();
    let w: Vec<&[f64]> = rows
        .iter()
        .map(|&i| cohort.rows()[i].w.as_slice())
        .collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|&i| if label(i) { 1.0 } else { 0.0 })
        .collect();
    let n1 = y.iter().filter(|&&v| v == 1.0).count();
    let n0 = y.len() - n1;

    let mut smd = Vec::with_capacity(d);
    for j in 0..d {
        let (g1, g0): (Vec<f64>, Vec<f64>) = {
            let mut a = Vec::with_capacity(n1);
            let mut b = Vec::with_capacity(n0);
            for (k, row) in w.iter().enumerate() {
                if y[k] == 1.0 {
                    a.push(row[j]);
                } else {
                    b.push(row[j]);
                }
            }
            (a, b)
        };
        let pooled = ((var_or_zero(&g1) + var_or_zero(&g0)) / 2.0).sqrt();
        let diff = mean(&g1) - mean(&g0);
        smd.push(if pooled > 0.0 { diff / pooled } else { 0.0 });
    }

    let basis = BasisSpec::main_terms().fit(&w);
    let x = basis.design(&w, &[]);
    match fit_logistic(&x, &y, None) {
        Ok(fit) => {
            let coefs = fit.beta[1..].to_vec();
            let max_abs = coefs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
            Ok(BalanceReport {
                refit_coefs: coefs,
                max_abs_coef: max_abs,
                smd,
                separated: false,
                n_label1: n1,
                n_label0: n0,
            })
        }
        Err(Error::Separation { .. }) => Ok(BalanceReport {
            refit_coefs: Vec::new(),
            max_abs_coef: f64::INFINITY,
            smd,
            separated: true,
            n_label1: n1,
            n_label0: n0,
        }),
        Err(e) => Err(e),
    }
}

fn var_or_zero(v: &[f64]) -> f64 {
    if v.len() < 2 {
        0.0
    } else {
        sample_var(v)
    }
}

/// Refit `S ~ [1, W]` on the given rows and report how far trial
/// membership is from independent of the covariates.
pub fn balance_report(cohort: &Cohort, rows: &[usize]) -> Result<BalanceReport> {
    let has_rct = rows.iter().any(|&i| cohort.rows()[i].is_rct());
    let has_ext = rows.iter().any(|&i| !cohort.rows()[i].is_rct());
    if !has_rct {
        return Err(Error::MissingStudyGroup("trial"));
    }
    if !has_ext {
        return Err(Error::MissingStudyGroup("external"));
    }
    report(cohort, rows, |i| cohort.rows()[i].is_rct())
}

/// Refit `A ~ [1, W]` on the given rows.
pub fn treatment_balance_report(cohort: &Cohort, rows: &[usize]) -> Result<BalanceReport> {
    let treated = rows.iter().filter(|&&i| cohort.rows()[i].treated()).count();
    if treated == 0 || treated == rows.len() {
        return Err(Error::SingleArm("selected rows"));
    }
    report(cohort, rows, |i| cohort.rows()[i].treated())
}
