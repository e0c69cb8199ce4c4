//! The `atmle` command line: simulate, generate, match, estimate, diagnose.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime failure,
//! 4 statistical precondition violated.

pub mod config;
pub mod diagnose;
pub mod io;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::cohort::Cohort;
use crate::error::Error;
use crate::estimate::Estimate;
use crate::estimators::{
    estimate_atmle, estimate_tmle_rct, fit_aipw, AtmleDiagnostics, AtmleOptions,
};
use crate::matching::{trim_to_size, two_step_match, BalanceReport, MatchStage, TrimPolicy};
use crate::nuisance::{BasisSpec, TreatmentTerms};
use crate::simulation::{
    emit_metrics, emit_selection_markdown, generate_pool, run_experiment, ExperimentConfig,
    MetricsFormat, Strategy,
};
pub use config::{
    DiagnoseParams, EstimateParams, EstimatorKind, GenerateParams, MatchParams, Scenario,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Run(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Run(Error::Config(_)) => 2,
            CliError::Run(e) if e.is_precondition() => 4,
            CliError::Run(_) => 3,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "atmle",
    version,
    about = "Trial augmentation with external data: simulate, match, estimate, diagnose"
)]
pub struct Cli {
    /// Worker threads (all cores when omitted). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the replicated strategy comparison and write metrics.
    Simulate(SimulateArgs),
    /// Draw one trial-plus-external pool and write it as a cohort CSV.
    Generate(GenerateArgs),
    /// Select external rows by outcome-blind two-step matching.
    Match(MatchArgs),
    /// Estimate the average treatment effect from a cohort CSV.
    Estimate(EstimateArgs),
    /// Evaluate exact remainders and oracle bias under a built-in truth.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Experiment config (JSON); the full default grid when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Metrics CSV; the markdown summary goes beside it with extension `.md`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_rct: Option<usize>,
    /// Pool size of every external source.
    #[arg(long)]
    pub source_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    BestDistance,
    Random,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Pooled cohort CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Matched cohort CSV; the balance report goes beside it as `.balance.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub target_n: Option<usize>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
    /// Seed of the random trimming policy.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replacement: bool,
    #[arg(long)]
    pub caliper: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BasisArg {
    MainTerms,
    Hal0,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Result JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorKind>,
    /// Trial randomization probability.
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long, value_enum)]
    pub basis: Option<BasisArg>,
    /// Knots per covariate for the `hal0` basis.
    #[arg(long, default_value_t = 5)]
    pub knots: usize,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub scenario: Option<Scenario>,
    /// Comma-separated perturbation sizes.
    #[arg(long, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    /// Monte Carlo draws.
    #[arg(long)]
    pub mc_n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Optional JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parse arguments, run, print any error, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let workers = cli.workers;
    if workers == Some(0) {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Run(Error::InvalidInput(format!("thread pool: {e}"))))?;
    pool.install(|| match cli.command {
        Command::Simulate(a) => cmd_simulate(a, workers),
        Command::Generate(a) => cmd_generate(a),
        Command::Match(a) => cmd_match(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Diagnose(a) => cmd_diagnose(a),
    })
}

fn load_or_default<T: serde::de::DeserializeOwned + Default>(
    path: &Option<PathBuf>,
) -> CliResult<T> {
    match path {
        Some(p) => config::load_json(p),
        None => Ok(T::default()),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(Error::from)?))
}

fn read_cohort(path: &Path, r: f64) -> CliResult<Cohort> {
    let f = File::open(path)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;
    Ok(io::read_cohort_csv(BufReader::new(f), r)?)
}

fn require_path(p: &Path, what: &str) -> CliResult<()> {
    if p.as_os_str().is_empty() {
        return Err(CliError::Config(format!("{what} path is required")));
    }
    Ok(())
}

fn cmd_simulate(a: SimulateArgs, workers: Option<usize>) -> CliResult<()> {
    let mut cfg: ExperimentConfig = load_or_default(&a.config)?;
    if let Some(n) = a.replications {
        cfg.replications = n;
    }
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    cfg.validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    config::write_resolved(&a.out, &cfg)?;
    let report = run_experiment(&cfg, workers)?;
    std::fs::write(&a.out, emit_metrics(&report.rows, MetricsFormat::Csv)?).map_err(Error::from)?;
    let mut md = emit_metrics(&report.rows, MetricsFormat::Markdown)?;
    if cfg.strategies.iter().any(|s| *s != Strategy::RctOnly) {
        md.push('\n');
        md.push_str(&emit_selection_markdown(&report.selection));
    }
    std::fs::write(a.out.with_extension("md"), md).map_err(Error::from)?;
    eprintln!(
        "wrote {} metrics rows to {}",
        report.rows.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> CliResult<()> {
    let mut p: GenerateParams = load_or_default(&a.config)?;
    if let Some(s) = a.seed {
        p.dgp.seed = s;
    }
    if let Some(n) = a.n_rct {
        p.dgp.n_rct = n;
    }
    if let Some(n) = a.source_size {
        p.dgp.source_sizes = vec![n; crate::simulation::N_SOURCES];
    }
    if let Some(o) = a.out {
        p.output = o;
    }
    require_path(&p.output, "output")?;
    p.dgp
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    config::write_resolved(&p.output, &p)?;
    let pool = generate_pool(&p.dgp)?;
    io::write_cohort_csv(create(&p.output)?, &pool, None)?;
    Ok(())
}

fn render_balance(label: &str, b: &BalanceReport) -> String {
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.4}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    format!(
        "{label}: trial n = {}, external n = {}\n  max |coef| = {:.4}{}\n  coefficients: [{}]\n  SMD: [{}]\n",
        b.n_label1,
        b.n_label0,
        b.max_abs_coef,
        if b.separated { " (separated)" } else { "" },
        fmt(&b.refit_coefs),
        fmt(&b.smd)
    )
}

fn cmd_match(a: MatchArgs) -> CliResult<()> {
    let mut p: MatchParams = load_or_default(&a.config)?;
    if let Some(v) = a.input {
        p.input = v;
    }
    if let Some(v) = a.out {
        p.output = v;
    }
    if let Some(v) = a.k {
        p.spec.k = v;
    }
    if let Some(v) = a.m {
        p.spec.m = v;
    }
    if a.target_n.is_some() {
        p.spec.target_external_n = a.target_n;
    }
    if a.replacement {
        p.spec.replacement = true;
    }
    if a.caliper.is_some() {
        p.spec.caliper = a.caliper;
    }
    let seed = a.seed.or(match p.policy {
        TrimPolicy::Random { seed } => Some(seed),
        TrimPolicy::BestDistance => None,
    });
    match a.policy {
        Some(PolicyArg::Random) => {
            p.policy = TrimPolicy::Random {
                seed: seed.unwrap_or(0),
            }
        }
        Some(PolicyArg::BestDistance) => p.policy = TrimPolicy::BestDistance,
        None => {
            if let (TrimPolicy::Random { .. }, Some(s)) = (p.policy, seed) {
                p.policy = TrimPolicy::Random { seed: s };
            }
        }
    }
    require_path(&p.input, "input")?;
    require_path(&p.output, "output")?;
    p.spec
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    config::write_resolved(&p.output, &p)?;

    // matching never reads outcomes or the randomization probability
    let cohort = read_cohort(&p.input, 0.5)?;
    let spec = crate::matching::MatchSpec {
        target_external_n: None,
        ..p.spec.clone()
    };
    let mut res = two_step_match(&cohort, &spec, &p.score_basis)?;
    if let Some(n) = p.spec.target_external_n {
        let n = n.min(res.selected_external.len());
        res = trim_to_size(&cohort, &res, n, p.policy)?;
    }
    let trial: Vec<usize> = (0..cohort.len())
        .filter(|&i| cohort.rows()[i].is_rct())
        .collect();
    let mut keep = trial;
    keep.extend(&res.selected_external);
    keep.sort_unstable();
    io::write_cohort_csv(create(&p.output)?, &cohort, Some(&keep))?;

    let mut text = format!(
        "stage: {}\nselected external rows: {}\n",
        match res.stage {
            MatchStage::TesOnly => "trial enrollment score only",
            MatchStage::TesThenPs => "trial enrollment score, then propensity score",
        },
        res.selected_external.len()
    );
    text.push_str(&render_balance("before", &res.balance_before));
    text.push_str(&render_balance("after", &res.balance_after));
    if !res.shortfalls.is_empty() {
        text.push_str(&format!(
            "rows with fewer matches than requested: {}\n",
            res.shortfalls.len()
        ));
    }
    let mut f = create(&p.output.with_extension("balance.txt"))?;
    f.write_all(text.as_bytes()).map_err(Error::from)?;
    print!("{text}");
    Ok(())
}

#[derive(Debug, Serialize)]
struct EstimateDocument<'a> {
    estimator: &'static str,
    r: f64,
    #[serde(flatten)]
    estimate: &'a Estimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pooled: Option<&'a Estimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bias: Option<&'a Estimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostics: Option<&'a AtmleDiagnostics>,
}

fn cmd_estimate(a: EstimateArgs) -> CliResult<()> {
    let mut p: EstimateParams = load_or_default(&a.config)?;
    if let Some(v) = a.input {
        p.input = v;
    }
    if let Some(v) = a.out {
        p.output = v;
    }
    if let Some(v) = a.estimator {
        p.estimator = v;
    }
    if a.r.is_some() {
        p.r = a.r;
    }
    match a.basis {
        Some(BasisArg::MainTerms) => p.basis = BasisSpec::main_terms(),
        Some(BasisArg::Hal0) => p.basis = BasisSpec::indicator_hal0(a.knots, 1),
        None => {}
    }
    if let Some(v) = a.alpha {
        p.alpha = v;
    }
    if let Some(v) = a.seed {
        p.seed = v;
    }
    require_path(&p.input, "input")?;
    require_path(&p.output, "output")?;
    let r =
        p.r.ok_or_else(|| CliError::Config("--r (randomization probability) is required".into()))?;
    if !(r > 0.0 && r < 1.0) {
        return Err(CliError::Config(format!("--r must lie in (0, 1), got {r}")));
    }
    if !(p.alpha > 0.0 && p.alpha < 1.0) {
        return Err(CliError::Config(format!(
            "alpha must lie in (0, 1), got {}",
            p.alpha
        )));
    }
    config::write_resolved(&p.output, &p)?;

    let cohort = read_cohort(&p.input, r)?;
    let defaults = AtmleOptions::default().with_seed(p.seed);
    let lasso = defaults.lasso.clone();
    let effect_basis = p.basis.clone().with_treatment(TreatmentTerms::Interacted);
    let doc_text = match p.estimator {
        EstimatorKind::Atmle => {
            let mut options = defaults;
            options.alpha = p.alpha;
            options.cate_basis = p.basis.clone();
            options.bias_basis = p.basis.clone();
            options.nuisance.score_basis = p.score_basis.clone();
            let res = estimate_atmle(&cohort, &options)?;
            to_json(&EstimateDocument {
                estimator: p.estimator.as_str(),
                r,
                estimate: &res.combined,
                pooled: Some(&res.pooled),
                bias: Some(&res.bias),
                diagnostics: Some(&res.diagnostics),
            })?
        }
        EstimatorKind::TmleRct | EstimatorKind::Aipw => {
            let est = if p.estimator == EstimatorKind::TmleRct {
                estimate_tmle_rct(&cohort, &effect_basis, &lasso, p.alpha)?
            } else {
                fit_aipw(&cohort, &effect_basis, &p.score_basis, &lasso, p.alpha)?
            };
            to_json(&EstimateDocument {
                estimator: p.estimator.as_str(),
                r,
                estimate: &est,
                pooled: None,
                bias: None,
                diagnostics: None,
            })?
        }
    };
    std::fs::write(&p.output, &doc_text).map_err(Error::from)?;
    print!("{doc_text}");
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(Error::from)?;
    s.push('\n');
    Ok(s)
}

fn cmd_diagnose(a: DiagnoseArgs) -> CliResult<()> {
    let mut p: DiagnoseParams = load_or_default(&a.config)?;
    if let Some(v) = a.scenario {
        p.scenario = v;
    }
    if let Some(v) = a.eps {
        p.eps = v;
    }
    if let Some(v) = a.mc_n {
        p.mc.n = v;
    }
    if let Some(v) = a.seed {
        p.mc.seed = v;
    }
    if a.out.is_some() {
        p.output = a.out;
    }
    let report = diagnose::run_diagnose(&p).map_err(|e| match e {
        Error::InvalidInput(m) => CliError::Config(m),
        other => CliError::Run(other),
    })?;
    if let Some(out) = &p.output {
        config::write_resolved(out, &p)?;
        std::fs::write(out, to_json(&report)?).map_err(Error::from)?;
    }
    print!("{}", report.render());
    Ok(())
}
