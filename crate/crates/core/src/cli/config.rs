//! Strict JSON run configurations. Every command resolves its flags and
//! optional config file into one of these and writes it next to its output,
//! so the run can be repeated from that file alone.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::CliError;
use crate::diagnostics::{LadderKind, McConfig};
use crate::matching::{MatchSpec, TrimPolicy};
use crate::nuisance::BasisSpec;
use crate::simulation::DgpConfig;

/// Parse JSON, rejecting unknown keys. Errors carry the origin and the
/// parser's line and column.
pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_json(&text, &path.display().to_string())
}

/// `out.csv` → `out.config.json`.
pub fn resolved_config_path(output: &Path) -> PathBuf {
    output.with_extension("config.json")
}

pub fn write_resolved<T: Serialize>(output: &Path, config: &T) -> Result<PathBuf, CliError> {
    let path = resolved_config_path(output);
    let mut text = serde_json::to_string_pretty(config).map_err(crate::Error::from)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(crate::Error::from)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchParams {
    pub input: PathBuf,
    pub output: PathBuf,
    pub spec: MatchSpec,
    /// How to cut the matched set down to `spec.target_external_n`.
    pub policy: TrimPolicy,
    /// Basis of the trial enrollment score model.
    pub score_basis: BasisSpec,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            output: PathBuf::new(),
            spec: MatchSpec::default(),
            policy: TrimPolicy::BestDistance,
            score_basis: BasisSpec::main_terms(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    #[default]
    Atmle,
    TmleRct,
    Aipw,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Atmle => "atmle",
            EstimatorKind::TmleRct => "tmle-rct",
            EstimatorKind::Aipw => "aipw",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateParams {
    pub input: PathBuf,
    pub output: PathBuf,
    pub estimator: EstimatorKind,
    /// Trial randomization probability; required.
    pub r: Option<f64>,
    /// Working basis for effects and outcome regressions.
    pub basis: BasisSpec,
    /// Basis of the enrollment and propensity score models.
    pub score_basis: BasisSpec,
    pub alpha: f64,
    /// Seed of the cross-validation fold assignment.
    pub seed: u64,
}

impl Default for EstimateParams {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            output: PathBuf::new(),
            estimator: EstimatorKind::Atmle,
            r: None,
            basis: BasisSpec::main_terms(),
            score_basis: BasisSpec::main_terms(),
            alpha: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateParams {
    pub dgp: DgpConfig,
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Oracle bias under constant scores for a misspecified basis.
    #[default]
    ConstantScores,
    /// Both remainders with the true scores and wrong outcome models.
    TrueG,
    /// Pooled remainder as `g_P = g0 + eps`, with the log-log slope.
    GPerturb,
    /// Bias remainder as `Π_P = Π0 + eps`, with the log-log slope.
    PiPerturb,
    /// Oracle bias over the misspecification ladders.
    Ladder,
    /// Oracle bias of main-terms working models under the simulation design.
    SimulationDesign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseParams {
    pub scenario: Scenario,
    pub eps: Vec<f64>,
    pub mc: McConfig,
    /// Ladder kinds and rung weights for the ladder scenario.
    pub ladder_kinds: Vec<LadderKind>,
    pub ladder_weights: Vec<f64>,
    /// Optional JSON report; the text summary always goes to stdout.
    pub output: Option<PathBuf>,
}

impl Default for DiagnoseParams {
    fn default() -> Self {
        Self {
            scenario: Scenario::ConstantScores,
            eps: vec![0.01, 0.02, 0.04, 0.08],
            mc: McConfig::default(),
            ladder_kinds: LadderKind::ALL.to_vec(),
            ladder_weights: crate::diagnostics::LADDER_WEIGHTS.to_vec(),
            output: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_named_with_their_position() {
        let err = parse_json::<EstimateParams>(
            "{\n  \"estimator\": \"aipw\",\n  \"bogus\": 1\n}",
            "cfg.json",
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus") && msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn defaults_round_trip() {
        let p = EstimateParams::default();
        let text = serde_json::to_string(&p).unwrap();
        assert_eq!(parse_json::<EstimateParams>(&text, "x").unwrap(), p);
        let d = DiagnoseParams::default();
        let text = serde_json::to_string(&d).unwrap();
        assert_eq!(parse_json::<DiagnoseParams>(&text, "x").unwrap(), d);
    }

    #[test]
    fn resolved_config_sits_next_to_output() {
        assert_eq!(
            resolved_config_path(Path::new("a/b/out.csv")),
            PathBuf::from("a/b/out.config.json")
        );
        assert_eq!(
            resolved_config_path(Path::new("res")),
            PathBuf::from("res.config.json")
        );
    }
}
