//! Command-line front end: ingestion, estimation, prior fitting, posterior
//! application, simulation, and scorecard emission.
//!
//! All results are written as JSON (the single source of truth); stochastic
//! commands require an explicit seed and embed it in the output, so a rerun
//! with the same inputs is byte-identical. Exit codes: 0 success, 1 data or
//! computation error, 2 usage error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use augvr_core::{
    ancova_estimate, cuped_estimate, fit_prior, gen_ana_population, gen_experiment,
    load_decomposed_json, load_unit_csv, naive_delta, significance_scorecard, AnaPrior,
    AnaScenario, AncovaVariant, Assignment, BootstrapConfig, ColumnKind, ColumnSchema,
    DeltaEstimate, Mat2, MetricSpec, OutcomeDist, Scorecard, SimScenario,
};

/// Caps worker threads; 0 or unset picks the default.
const THREADS_ENV: &str = "AUGMENT_VR_THREADS";

#[derive(Parser)]
#[command(
    name = "augvr",
    version,
    about = "Variance reduction for randomized experiments: augmentation estimators, \
             ANCOVA comparators, metric decomposition, and a simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Naive metric analysis of a unit-level CSV
    Analyze(AnalyzeArgs),
    /// Augmentation estimate with pre-period metric covariates
    Cuped(CupedArgs),
    /// Regression-adjusted estimate (variant 1 or 2, HC0 errors)
    Ancova(AncovaArgs),
    /// Decomposed-delta workflows
    #[command(subcommand)]
    Ana(AnaCommand),
    /// Draw synthetic data with known ground truth
    #[command(subcommand)]
    Simulate(SimulateCommand),
    /// Per-experiment significance table over a decomposed-delta file
    Scorecard(ScorecardArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Unit-level CSV path
    #[arg(long)]
    data: PathBuf,
    /// Metric spec: mean:col | ratio:num/den | pNN:col
    #[arg(long)]
    metric: String,
    /// Column kinds, e.g. y=outcome,x_pre=pre_period (defaults inferred
    /// from the metric)
    #[arg(long)]
    schema: Option<String>,
    /// Bootstrap resamples for percentile variances
    #[arg(long, default_value_t = 2000)]
    resamples: usize,
    /// RNG seed; required when the metric needs a bootstrap
    #[arg(long)]
    seed: Option<u64>,
    /// Output JSON path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CupedArgs {
    #[arg(long)]
    data: PathBuf,
    /// Target metric spec
    #[arg(long)]
    metric: String,
    /// Pre-period covariate metric spec (repeatable)
    #[arg(long = "cov", required = true)]
    covariates: Vec<String>,
    #[arg(long)]
    schema: Option<String>,
    #[arg(long, default_value_t = 2000)]
    resamples: usize,
    /// RNG seed; required when any spec needs the joint bootstrap
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AncovaArgs {
    #[arg(long)]
    data: PathBuf,
    /// Outcome column
    #[arg(long)]
    outcome: String,
    /// Pre-period covariate column
    #[arg(long)]
    covariate: String,
    /// 1 = pooled slope, 2 = treatment interaction with centered covariate
    #[arg(long)]
    variant: u8,
    #[arg(long)]
    schema: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AnaCommand {
    /// Fit the effect prior from a decomposed-delta JSON file
    Fit(AnaFitArgs),
    /// Apply a fitted prior: posteriors and proxy-metric estimates per
    /// experiment
    Apply(AnaApplyArgs),
}

#[derive(Args)]
struct AnaFitArgs {
    /// Decomposed-delta JSON path
    #[arg(long)]
    data: PathBuf,
    /// Where to write prior.json (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnaApplyArgs {
    /// prior.json from `ana fit`
    #[arg(long)]
    prior: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Highlighted proxy objective: min-error | max-corr
    #[arg(long, default_value = "min-error")]
    objective: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SimulateCommand {
    /// Unit-level experiment CSV with a correlated pre-period column
    Units(SimulateUnitsArgs),
    /// Decomposed-delta population JSON plus a truth sidecar
    Ana(SimulateAnaArgs),
}

#[derive(Args)]
struct SimulateUnitsArgs {
    #[arg(long)]
    n: usize,
    /// Treatment probability
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    /// Pre-period/outcome correlation
    #[arg(long)]
    rho: f64,
    /// True average treatment effect
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    /// normal | lognormal
    #[arg(long, default_value = "normal")]
    dist: String,
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    sd: f64,
    #[arg(long)]
    seed: u64,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateAnaArgs {
    #[arg(long)]
    experiments: usize,
    /// Effect covariance upper triangle: a,b,d for [[a,b],[b,d]]
    #[arg(long)]
    lambda: String,
    /// Noise covariance upper triangle: a,b,d
    #[arg(long)]
    sigma: String,
    /// Per-experiment diagonal wobble of sigma (0 = constant)
    #[arg(long, default_value_t = 0.0)]
    dispersion: f64,
    #[arg(long)]
    seed: u64,
    /// Output decomposed-delta JSON path
    #[arg(long)]
    out: PathBuf,
    /// Hidden-truth sidecar path (defaults to <out dir>/truth.json)
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct ScorecardArgs {
    #[arg(long)]
    data: PathBuf,
    /// Fitted prior; fitted from --data when omitted
    #[arg(long)]
    prior: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Output JSON path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Tidy CSV of (experiment, method, estimate, variance, z) for plotting
    #[arg(long)]
    csv: Option<PathBuf>,
}

enum AppError {
    Usage(String),
    Run(anyhow::Error),
}

impl<E: std::error::Error + Send + Sync + 'static> From<E> for AppError {
    fn from(e: E) -> Self {
        AppError::Run(e.into())
    }
}

fn usage(msg: impl Into<String>) -> AppError {
    AppError::Usage(msg.into())
}

fn main() {
    init_threads();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => {}
        Err(AppError::Usage(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(2);
        }
        Err(AppError::Run(e)) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}

fn init_threads() {
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        if let Ok(n) = raw.trim().parse::<usize>() {
            if n > 0 {
                // Ignore failure if a pool already exists.
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

fn run(command: Command) -> Result<(), AppError> {
    match command {
        Command::Analyze(args) => run_analyze(args),
        Command::Cuped(args) => run_cuped(args),
        Command::Ancova(args) => run_ancova(args),
        Command::Ana(AnaCommand::Fit(args)) => run_ana_fit(args),
        Command::Ana(AnaCommand::Apply(args)) => run_ana_apply(args),
        Command::Simulate(SimulateCommand::Units(args)) => run_simulate_units(args),
        Command::Simulate(SimulateCommand::Ana(args)) => run_simulate_ana(args),
        Command::Scorecard(args) => run_scorecard(args),
    }
}

/// Parse `col=kind,...`; kinds are outcome | pre_period | numerator |
/// denominator | component.
fn parse_schema(raw: &str) -> Result<ColumnSchema, AppError> {
    let mut schema = ColumnSchema::new();
    for item in raw.split(',') {
        let item = item.trim();
        if item.is_empty() {
            continue;
        }
        let (col, kind) = item
            .split_once('=')
            .ok_or_else(|| usage(format!("--schema entry {item:?} is not col=kind")))?;
        let kind = ColumnKind::parse(kind.trim())
            .ok_or_else(|| usage(format!("--schema entry {item:?} has unknown kind")))?;
        schema.insert(col.trim().to_string(), kind);
    }
    if schema.is_empty() {
        return Err(usage("--schema is empty"));
    }
    Ok(schema)
}

fn parse_metric(raw: &str) -> Result<MetricSpec, AppError> {
    MetricSpec::parse(raw).map_err(|e| usage(format!("--metric: {e}")))
}

/// Default column kinds when no --schema is given: ratio legs are tagged
/// numerator/denominator, everything else referenced by a target metric is
/// an outcome; covariate columns are pre-period.
fn default_kind_for(spec: &MetricSpec, col: &str) -> ColumnKind {
    match spec {
        MetricSpec::Ratio { numerator, .. } if col == numerator => ColumnKind::Numerator,
        MetricSpec::Ratio { .. } => ColumnKind::Denominator,
        _ => ColumnKind::Outcome,
    }
}

fn schema_for(
    explicit: &Option<String>,
    data_path: &Path,
    targets: &[&MetricSpec],
    covariates: &[MetricSpec],
) -> Result<ColumnSchema, AppError> {
    if let Some(raw) = explicit {
        return parse_schema(raw);
    }
    let mut schema = ColumnSchema::new();
    for spec in targets {
        for col in spec.columns() {
            schema
                .entry(col.to_string())
                .or_insert_with(|| default_kind_for(spec, col));
        }
    }
    for spec in covariates {
        for col in spec.columns() {
            schema
                .entry(col.to_string())
                .or_insert(ColumnKind::PrePeriod);
        }
    }
    // Columns the command does not touch default to plain outcomes so the
    // strict loader accepts the file; --schema overrides when that is wrong.
    for col in csv_header(data_path)? {
        if col != "unit_id" && col != "assignment" {
            schema.entry(col).or_insert(ColumnKind::Outcome);
        }
    }
    Ok(schema)
}

fn csv_header(path: &Path) -> Result<Vec<String>, AppError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| AppError::Run(anyhow::anyhow!("cannot read {}: {e}", path.display())))?;
    let header = rdr
        .headers()
        .map_err(|e| AppError::Run(anyhow::anyhow!("cannot read header: {e}")))?;
    Ok(header.iter().map(|s| s.trim().to_string()).collect())
}

fn parse_alpha(alpha: f64) -> Result<f64, AppError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(alpha)
    } else {
        Err(usage(format!(
            "--alpha must lie strictly inside (0,1), got {alpha}"
        )))
    }
}

/// Upper-triangle matrix flag: "a,b,d" for [[a,b],[b,d]].
fn parse_sym_matrix(flag: &str, raw: &str) -> Result<Mat2, AppError> {
    let parts: Vec<f64> = raw
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("--{flag} must be three numbers a,b,d")))?;
    if parts.len() != 3 {
        return Err(usage(format!(
            "--{flag} needs exactly a,b,d (upper triangle), got {} values",
            parts.len()
        )));
    }
    Ok(Mat2::sym(parts[0], parts[1], parts[2]))
}

fn emit(out: &Option<PathBuf>, value: &impl Serialize) -> Result<(), AppError> {
    let mut text = serde_json::to_string_pretty(value).map_err(AppError::from)?;
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), AppError> {
    let mut text = serde_json::to_string_pretty(value).map_err(AppError::from)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn run_analyze(args: AnalyzeArgs) -> Result<(), AppError> {
    let spec = parse_metric(&args.metric)?;
    let needs_seed = matches!(spec, MetricSpec::Percentile { .. });
    if needs_seed && args.seed.is_none() {
        return Err(usage(
            "--seed is required for percentile metrics (bootstrap variance)",
        ));
    }
    let schema = schema_for(&args.schema, &args.data, &[&spec], &[])?;
    let data = load_unit_csv(&args.data, &schema)?;
    let boot = BootstrapConfig {
        resamples: args.resamples,
        seed: args.seed.unwrap_or(0),
    };
    let delta = naive_delta(&data, &spec, &boot)?;
    let mt = augvr_core::metric_value(&data, &spec, Assignment::Treatment)?;
    let mc = augvr_core::metric_value(&data, &spec, Assignment::Control)?;
    emit(
        &args.out,
        &json!({
            "command": "analyze",
            "metric": spec.to_string(),
            "estimate": delta.estimate,
            "variance": delta.variance,
            "se": delta.se(),
            "z": finite_or_null(delta.z()),
            "p_value": delta.p_value(),
            "m_treatment": mt,
            "m_control": mc,
            "n_treatment": delta.n_treatment,
            "n_control": delta.n_control,
            "details": delta.aux,
            "seed": args.seed,
        }),
    )
}

/// Output record for the cuped command.
#[derive(Serialize)]
struct CupedRecord {
    estimate: f64,
    se: f64,
    z: Option<f64>,
    p_value: f64,
    theta: Vec<f64>,
    corr_squared: f64,
    variance_reduction_factor: f64,
    method: augvr_core::Method,
    seed: Option<u64>,
}

fn finite_or_null(z: f64) -> Option<f64> {
    z.is_finite().then_some(z)
}

fn run_cuped(args: CupedArgs) -> Result<(), AppError> {
    let spec = parse_metric(&args.metric)?;
    let covariates: Vec<MetricSpec> = args
        .covariates
        .iter()
        .map(|c| MetricSpec::parse(c).map_err(|e| usage(format!("--cov: {e}"))))
        .collect::<Result<_, _>>()?;
    let needs_seed = !spec.is_mean() || covariates.iter().any(|c| !c.is_mean());
    if needs_seed && args.seed.is_none() {
        return Err(usage(
            "--seed is required when the target or a covariate needs the joint bootstrap",
        ));
    }
    let schema = schema_for(&args.schema, &args.data, &[&spec], &covariates)?;
    let data = load_unit_csv(&args.data, &schema)?;
    let boot = BootstrapConfig {
        resamples: args.resamples,
        seed: args.seed.unwrap_or(0),
    };
    let result = cuped_estimate(&data, &spec, &covariates, &boot)?;
    emit(
        &args.out,
        &CupedRecord {
            estimate: result.delta.estimate,
            se: result.delta.se(),
            z: finite_or_null(result.delta.z()),
            p_value: result.delta.p_value(),
            theta: result.theta.clone(),
            corr_squared: result.corr_squared,
            variance_reduction_factor: result.variance_reduction_factor,
            method: result.delta.method,
            seed: needs_seed.then_some(boot.seed),
        },
    )
}

fn run_ancova(args: AncovaArgs) -> Result<(), AppError> {
    let variant = match args.variant {
        1 => AncovaVariant::Ancova1,
        2 => AncovaVariant::Ancova2,
        other => return Err(usage(format!("--variant must be 1 or 2, got {other}"))),
    };
    let schema = match &args.schema {
        Some(raw) => parse_schema(raw)?,
        None => {
            let mut schema: ColumnSchema = [
                (args.outcome.clone(), ColumnKind::Outcome),
                (args.covariate.clone(), ColumnKind::PrePeriod),
            ]
            .into_iter()
            .collect();
            for col in csv_header(&args.data)? {
                if col != "unit_id" && col != "assignment" {
                    schema.entry(col).or_insert(ColumnKind::Outcome);
                }
            }
            schema
        }
    };
    let data = load_unit_csv(&args.data, &schema)?;
    let est: DeltaEstimate = ancova_estimate(&data, &args.outcome, &args.covariate, variant)?;
    emit(
        &args.out,
        &json!({
            "command": "ancova",
            "estimate": est.estimate,
            "se": est.se(),
            "z": finite_or_null(est.z()),
            "p_value": est.p_value(),
            "method": est.method,
            "n_treatment": est.n_treatment,
            "n_control": est.n_control,
            "details": est.aux,
        }),
    )
}

fn run_ana_fit(args: AnaFitArgs) -> Result<(), AppError> {
    let records = load_decomposed_json(&args.data)?;
    let prior = fit_prior(&records)?;
    emit(&args.out, &prior)
}

/// Wire format of prior.json.
#[derive(Deserialize)]
struct PriorFile {
    lambda: [[f64; 2]; 2],
    mean_sigma: [[f64; 2]; 2],
    n_experiments: usize,
}

fn load_prior(path: &Path) -> Result<AnaPrior, AppError> {
    let text = std::fs::read_to_string(path)?;
    let raw: PriorFile = serde_json::from_str(&text)?;
    Ok(AnaPrior::new(
        raw.lambda,
        raw.mean_sigma,
        raw.n_experiments,
    )?)
}

/// Flat per-experiment row emitted by `ana apply`.
#[derive(Serialize)]
struct ApplyRow {
    experiment_id: String,
    naive: f64,
    delta1: f64,
    delta2: f64,
    ana_min_err: f64,
    ana_max_corr: f64,
    bayes_mean: f64,
    bayes_var: f64,
    bayes_z: Option<f64>,
    theta_err: f64,
    theta_corr: f64,
    var_naive: f64,
    var_delta1: f64,
    var_delta2: f64,
    var_ana_min_err: f64,
    var_ana_max_corr: f64,
    p_naive: f64,
    p_delta1: f64,
    p_delta2: f64,
    p_ana_min_err: f64,
    p_ana_max_corr: f64,
}

fn run_ana_apply(args: AnaApplyArgs) -> Result<(), AppError> {
    let alpha = parse_alpha(args.alpha)?;
    let objective = match args.objective.as_str() {
        "min-error" => "min_error",
        "max-corr" => "max_corr",
        other => {
            return Err(usage(format!(
                "--objective must be min-error or max-corr, got {other:?}"
            )))
        }
    };
    let prior = load_prior(&args.prior)?;
    let records = load_decomposed_json(&args.data)?;
    let card = significance_scorecard(&records, &prior, alpha)?;
    let rows: Vec<ApplyRow> = card
        .rows
        .iter()
        .map(|r| ApplyRow {
            experiment_id: r.experiment_id.clone(),
            naive: r.naive.estimate,
            delta1: r.delta1.estimate,
            delta2: r.delta2.estimate,
            ana_min_err: r.ana_min_err.estimate,
            ana_max_corr: r.ana_max_corr.estimate,
            bayes_mean: r.bayes_mean,
            bayes_var: r.bayes_var,
            bayes_z: finite_or_null(r.bayes_z),
            theta_err: r.theta_err,
            theta_corr: r.theta_corr,
            var_naive: r.naive.variance,
            var_delta1: r.delta1.variance,
            var_delta2: r.delta2.variance,
            var_ana_min_err: r.ana_min_err.variance,
            var_ana_max_corr: r.ana_max_corr.variance,
            p_naive: r.naive.p_value,
            p_delta1: r.delta1.p_value,
            p_delta2: r.delta2.p_value,
            p_ana_min_err: r.ana_min_err.p_value,
            p_ana_max_corr: r.ana_max_corr.p_value,
        })
        .collect();
    emit(
        &args.out,
        &json!({
            "command": "ana_apply",
            "objective": objective,
            "alpha": alpha,
            "n_experiments": rows.len(),
            "rows": rows,
        }),
    )
}

fn run_simulate_units(args: SimulateUnitsArgs) -> Result<(), AppError> {
    let outcome_dist = match args.dist.as_str() {
        "normal" => OutcomeDist::Normal {
            mu: args.mu,
            sd: args.sd,
        },
        "lognormal" => OutcomeDist::LogNormal {
            mu: args.mu,
            sd: args.sd,
        },
        other => {
            return Err(usage(format!(
                "--dist must be normal or lognormal, got {other:?}"
            )))
        }
    };
    let scenario = SimScenario {
        n_units: args.n,
        p_treatment: args.p,
        rho_pre: args.rho,
        true_delta: args.delta,
        outcome_dist,
        seed: args.seed,
    };
    let data = gen_experiment(&scenario)?;
    data.write_csv_path(&args.out)?;
    emit(
        &None,
        &json!({
            "command": "simulate_units",
            "output": args.out,
            "experiment_id": data.experiment_id(),
            "n_units": data.n_units(),
            "n_treatment": data.n_group(Assignment::Treatment),
            "n_control": data.n_group(Assignment::Control),
            "seed": args.seed,
            "rng": augvr_core::rng::RNG_NAME,
        }),
    )
}

fn run_simulate_ana(args: SimulateAnaArgs) -> Result<(), AppError> {
    let lambda = parse_sym_matrix("lambda", &args.lambda)?;
    let sigma = parse_sym_matrix("sigma", &args.sigma)?;
    let scenario = AnaScenario {
        n_experiments: args.experiments,
        lambda,
        sigma,
        sigma_dispersion: args.dispersion,
        seed: args.seed,
    };
    let population = gen_ana_population(&scenario)?;
    let truth_path = args.truth.clone().unwrap_or_else(|| {
        args.out
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("truth.json")
    });
    write_json(&args.out, &population.records)?;
    write_json(&truth_path, &population.truths)?;
    emit(
        &None,
        &json!({
            "command": "simulate_ana",
            "output": args.out,
            "truth_output": truth_path,
            "n_experiments": population.records.len(),
            "seed": args.seed,
            "rng": augvr_core::rng::RNG_NAME,
        }),
    )
}

fn scorecard_csv(card: &Scorecard) -> String {
    let mut out = String::from("experiment,method,estimate,variance,z\n");
    for row in &card.rows {
        let cells = [
            ("naive", row.naive.estimate, row.naive.variance, row.naive.z),
            (
                "delta1",
                row.delta1.estimate,
                row.delta1.variance,
                row.delta1.z,
            ),
            (
                "delta2",
                row.delta2.estimate,
                row.delta2.variance,
                row.delta2.z,
            ),
            (
                "ana_min_err",
                row.ana_min_err.estimate,
                row.ana_min_err.variance,
                row.ana_min_err.z,
            ),
            (
                "ana_max_corr",
                row.ana_max_corr.estimate,
                row.ana_max_corr.variance,
                row.ana_max_corr.z,
            ),
            ("bayes", row.bayes_mean, row.bayes_var, row.bayes_z),
            (
                "undecomposed_bayes",
                row.undecomposed_bayes_mean,
                row.undecomposed_bayes_var,
                row.undecomposed_bayes_z,
            ),
        ];
        for (method, estimate, variance, z) in cells {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.experiment_id, method, estimate, variance, z
            ));
        }
    }
    out
}

fn run_scorecard(args: ScorecardArgs) -> Result<(), AppError> {
    let alpha = parse_alpha(args.alpha)?;
    let records = load_decomposed_json(&args.data)?;
    let prior = match &args.prior {
        Some(path) => load_prior(path)?,
        None => fit_prior(&records)?,
    };
    let card = significance_scorecard(&records, &prior, alpha)?;
    if let Some(csv_path) = &args.csv {
        std::fs::write(csv_path, scorecard_csv(&card))?;
    }
    emit(
        &args.out,
        &json!({
            "command": "scorecard",
            "prior": prior,
            "alpha": card.alpha,
            "n_experiments": card.n_experiments,
            "counts": card.counts,
            "rows": card.rows,
        }),
    )
}
