//! Built-in diagnostic scenarios behind `atmle diagnose`.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;

use super::config::{DiagnoseParams, Scenario};
use crate::diagnostics::{
    exact_remainder_bias, exact_remainder_pooled, loglog_slope, misspecification_ladder,
    oracle_bias_mc, ArmFn, Candidate, LadderRow, McValue, TruthSpec,
};
use crate::error::Result;
use crate::nuisance::{BasisSpec, TreatmentTerms};
use crate::simulation::DgpConfig;

#[derive(Debug, Clone, Serialize)]
pub struct DiagnoseLine {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    pub value: McValue,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnoseReport {
    pub scenario: Scenario,
    pub truth: &'static str,
    pub lines: Vec<DiagnoseLine>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub ladder: Vec<LadderRow>,
}

/// A nonlinear enrollment effect no main-terms basis can represent.
fn curved_enrollment_effect() -> ArmFn {
    Arc::new(|w: &[f64], a: f64| -(0.3 + 0.2 * w[0] + 0.4 * a * w[1] + 0.2 * w[2] * w[2]))
}

fn main_bases() -> (BasisSpec, BasisSpec) {
    (
        BasisSpec::main_terms(),
        BasisSpec::main_terms().with_treatment(TreatmentTerms::Interacted),
    )
}

/// Truth with its working functions projected, then every outcome-side
/// nuisance deliberately moved away.
fn wrong_outcome_candidate(truth: &TruthSpec, params: &DiagnoseParams) -> Result<Candidate> {
    let (pooled, bias) = main_bases();
    let mut c = Candidate::projected(truth, &pooled, &bias, &params.mc)?;
    let (theta, qbar) = (truth.theta0.clone(), truth.qbar0.clone());
    c.theta = Arc::new(move |w: &[f64]| theta(w) + 0.5 - 0.3 * w[0]);
    c.qbar = Arc::new(move |w: &[f64], a: f64| qbar(w, a) + 0.3 * a + 0.2 * w[1]);
    c.tau_a = c.tau_a.shifted(0.2);
    c.tau_s = c.tau_s.shifted(-0.15);
    Ok(c)
}

pub fn run_diagnose(params: &DiagnoseParams) -> Result<DiagnoseReport> {
    let mc = &params.mc;
    let mut report = DiagnoseReport {
        scenario: params.scenario,
        truth: "",
        lines: Vec::new(),
        slope: None,
        ladder: Vec::new(),
    };
    let line = |label: &str, eps: Option<f64>, value: McValue| DiagnoseLine {
        label: label.to_string(),
        eps,
        value,
    };
    match params.scenario {
        Scenario::ConstantScores => {
            report.truth = "constant scores q0 = 0.3, e0 = 0.2, curved enrollment effect";
            let truth = TruthSpec::constant_scores(0.3, 0.2, 0.5, curved_enrollment_effect())?;
            let pooled = BasisSpec::main_terms().with_covariates(vec![0, 1]);
            let bias = BasisSpec::main_terms()
                .with_covariates(vec![0])
                .with_treatment(TreatmentTerms::MainEffect);
            let ob = oracle_bias_mc(&truth, &pooled, &bias, mc)?;
            report.lines.push(line("oracle bias", None, ob.value));
        }
        Scenario::TrueG => {
            report.truth = "simulation design; true scores, wrong outcome models";
            let truth = TruthSpec::simulation_design(&DgpConfig::default())?;
            let cand = wrong_outcome_candidate(&truth, params)?;
            report.lines.push(line(
                "pooled remainder",
                None,
                exact_remainder_pooled(&truth, &cand, mc)?.value,
            ));
            report.lines.push(line(
                "bias remainder",
                None,
                exact_remainder_bias(&truth, &cand, mc)?.value,
            ));
        }
        Scenario::GPerturb | Scenario::PiPerturb => {
            report.truth =
                "constant scores q0 = 0.7, e0 = 0.5 (g0 = 0.5), curved enrollment effect";
            let truth = TruthSpec::constant_scores(0.7, 0.5, 0.5, curved_enrollment_effect())?;
            let (pooled, bias) = main_bases();
            let cand = Candidate::projected(&truth, &pooled, &bias, mc)?;
            let mut values = Vec::with_capacity(params.eps.len());
            for &e in &params.eps {
                let (label, v) = if params.scenario == Scenario::GPerturb {
                    (
                        "pooled remainder",
                        exact_remainder_pooled(&truth, &cand.clone().with_g_shift(e), mc)?,
                    )
                } else {
                    (
                        "bias remainder",
                        exact_remainder_bias(&truth, &cand.clone().with_pi_shift(e), mc)?,
                    )
                };
                values.push(v.value.estimate);
                report.lines.push(line(label, Some(e), v.value));
            }
            report.slope = Some(loglog_slope(&params.eps, &values)?);
        }
        Scenario::Ladder => {
            report.truth = "ladder truths: logistic trial enrollment score, e0 = r = 0.5";
            for &kind in &params.ladder_kinds {
                report
                    .ladder
                    .extend(misspecification_ladder(kind, &params.ladder_weights, mc)?);
            }
        }
        Scenario::SimulationDesign => {
            report.truth = "simulation design; main-terms working models";
            let truth = TruthSpec::simulation_design(&DgpConfig::default())?;
            let (pooled, bias) = main_bases();
            let ob = oracle_bias_mc(&truth, &pooled, &bias, mc)?;
            report.lines.push(line("oracle bias", None, ob.value));
        }
    }
    Ok(report)
}

impl DiagnoseReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "truth: {}", self.truth);
        for l in &self.lines {
            let eps = l.eps.map(|e| format!(" at eps = {e}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{}{eps}: {:.6e} ± {:.2e} (MC se, n = {})",
                l.label, l.value.estimate, l.value.se, l.value.n
            );
        }
        if let Some(slope) = self.slope {
            let _ = writeln!(s, "log-log slope: {slope:.4}");
        }
        if !self.ladder.is_empty() {
            s.push_str("| kind | weight | adjusted R² | weighted MSE | oracle bias | MC se |\n|---|---|---|---|---|---|\n");
            for r in &self.ladder {
                let _ = writeln!(
                    s,
                    "| {} | {:.2} | {:.4} | {:.3e} | {:.3e} | {:.1e} |",
                    r.kind.name(),
                    r.weight,
                    r.adjusted_r2,
                    r.weighted_mse,
                    r.oracle_bias,
                    r.se
                );
            }
        }
        s
    }
}
