//! Command-line interface.
//!
//! Exit codes: 0 on success, 2 for invalid input (flags, CSV ingestion), 3
//! when estimation or simulation fails. Output files are written only after
//! all work has succeeded.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::data::{assign_folds, extra_columns, load_csv, PanelDataset};
use crate::estimators::{
    crossfit, onestep_crossfit, plugin_estimate, CorrectionWeight, EstimateResult, EstimatorOptions, OneStepTarget,
    PluginEstimate,
};
use crate::grid::{DensityCurve, DoseGrid, MIN_GRID_SIZE};
use crate::interventions::{parametric_density, BaseDistribution, InterventionSpec};
use crate::nuisance::{fit_dose_density, Bandwidth, ConditionalDensity, DoseBasis, LearnerSet, LearnerSpec};
use crate::simulation::{
    run_study, simulate_scenario, Scenario, ScenarioSpec, SimulationError, StudyConfig, StudyNuisance, StudyResult,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Input(_) => EXIT_INPUT,
            Self::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Increments `lo:hi:step`, inclusive of `hi` when it lies on the lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaGrid(pub Vec<f64>);

impl FromStr for DeltaGrid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, step] = parts[..] else {
            return Err(format!("expected lo:hi:step, got {s:?}"));
        };
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("not a number: {t:?}"));
        let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
        if !(lo.is_finite() && hi.is_finite()) || !(step > 0.0 && step.is_finite()) {
            return Err("bounds must be finite and step positive".into());
        }
        if hi < lo {
            return Err(format!("upper bound {hi} is below lower bound {lo}"));
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        if count > 10_001 {
            return Err(format!("grid has {count} points; at most 10001 allowed"));
        }
        Ok(Self((0..count).map(|i| lo + step * i as f64).collect()))
    }
}

fn parse_pair(body: &str) -> Result<(f64, f64), String> {
    let mut it = body.split(',').map(|t| t.trim().parse::<f64>());
    match (it.next(), it.next(), it.next()) {
        (Some(Ok(a)), Some(Ok(b)), None) => Ok((a, b)),
        _ => Err(format!("expected two comma-separated numbers, got {body:?}")),
    }
}

/// `uniform`, `beta:A,B` or `truncnormal:MEAN,SD`.
pub fn parse_base(s: &str) -> Result<BaseDistribution, String> {
    let (name, body) = s.split_once(':').unwrap_or((s, ""));
    let base = match name.trim().to_ascii_lowercase().as_str() {
        "uniform" if body.is_empty() => BaseDistribution::Uniform,
        "beta" => {
            let (alpha, beta) = parse_pair(body)?;
            BaseDistribution::Beta { alpha, beta }
        }
        "truncnormal" | "trunc_normal" => {
            let (mean, sd) = parse_pair(body)?;
            BaseDistribution::TruncNormal { mean, sd }
        }
        _ => return Err(format!("unknown base density {s:?}")),
    };
    base.validate().map_err(|e| e.to_string())?;
    Ok(base)
}

/// `auto` or a positive number.
pub fn parse_bandwidth(s: &str) -> Result<Bandwidth, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(Bandwidth::Auto);
    }
    match s.parse::<f64>() {
        Ok(b) if b > 0.0 && b.is_finite() => Ok(Bandwidth::Fixed(b)),
        _ => Err(format!("bandwidth must be 'auto' or a positive number, got {s:?}")),
    }
}

/// `ols`, `ridge:LAMBDA`, `logistic` or `kernel:BANDWIDTH`.
pub fn parse_learner(s: &str) -> Result<LearnerSpec, String> {
    let (name, body) = s.split_once(':').unwrap_or((s, ""));
    let value = || body.parse::<f64>().map_err(|_| format!("missing or bad parameter in {s:?}"));
    let spec = match name {
        "ols" => LearnerSpec::Ols,
        "logistic" => LearnerSpec::Logistic,
        "ridge" => LearnerSpec::Ridge { lambda: value()? },
        "kernel" => LearnerSpec::KernelSmoother { bandwidth: value()? },
        _ => return Err(format!("unknown learner {s:?}")),
    };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Tilt,
    Kernel,
    Mindose,
    Shift,
    Parametric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BasisArg {
    Linear,
    Quadratic,
}

#[derive(Debug, Parser)]
#[command(name = "tiltdid", version, about = "Stochastic dose effects in difference-in-differences designs")]
pub struct Cli {
    /// Worker threads; defaults to all available cores.
    #[arg(long, global = true, env = "TILTDID_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate effects on a panel CSV with columns y0, y1, a and covariates.
    Estimate(EstimateArgs),
    /// Run a repeated-sampling study on a benchmark scenario.
    Simulate(SimulateArgs),
    /// Emit counterfactual dose densities on the grid.
    DensityCurve(DensityArgs),
    /// Write one simulated dataset as a panel CSV.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InterventionArgs {
    #[arg(long, value_enum, default_value = "tilt")]
    pub intervention: Family,
    /// Tilt increment, or kernel width for `kernel`.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "delta_grid")]
    pub delta: Option<f64>,
    /// Tilt increments as lo:hi:step [default: -10:10:1].
    #[arg(long, allow_hyphen_values = true)]
    pub delta_grid: Option<DeltaGrid>,
    /// Kernel center.
    #[arg(long)]
    pub d_prime: Option<f64>,
    /// Minimum dose threshold.
    #[arg(long)]
    pub d_star: Option<f64>,
    /// Mean shift of the truncated normal.
    #[arg(long, allow_hyphen_values = true)]
    pub eta: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub shift_mean: f64,
    #[arg(long, default_value_t = 0.2)]
    pub shift_sd: f64,
    /// Fixed density: uniform, beta:A,B or truncnormal:MEAN,SD.
    #[arg(long, value_parser = parse_base)]
    pub base: Option<BaseDistribution>,
}

const DEFAULT_DELTA_GRID: &str = "-10:10:1";

impl InterventionArgs {
    pub fn specs(&self) -> Result<Vec<InterventionSpec>, CliError> {
        if self.intervention != Family::Tilt && self.delta_grid.is_some() {
            return Err(input("--delta-grid applies only to the tilt family"));
        }
        let need = |v: Option<f64>, flag: &str| v.ok_or_else(|| input(format!("{flag} is required")));
        let specs = match self.intervention {
            Family::Tilt => match (&self.delta_grid, self.delta) {
                (Some(grid), _) => grid.0.iter().map(|&d| InterventionSpec::tilt(d)).collect(),
                (None, Some(d)) => vec![InterventionSpec::tilt(d)],
                (None, None) => DeltaGrid::from_str(DEFAULT_DELTA_GRID)
                    .expect("default grid parses")
                    .0
                    .into_iter()
                    .map(InterventionSpec::tilt)
                    .collect(),
            },
            Family::Kernel => vec![InterventionSpec::GaussianKernel {
                delta: need(self.delta, "--delta")?,
                center: need(self.d_prime, "--d-prime")?,
            }],
            Family::Mindose => vec![InterventionSpec::MinimumDose {
                threshold: need(self.d_star, "--d-star")?,
            }],
            Family::Shift => vec![InterventionSpec::ParametricShift {
                mean: self.shift_mean,
                sd: self.shift_sd,
                eta: need(self.eta, "--eta")?,
            }],
            Family::Parametric => vec![InterventionSpec::Parametric {
                base: self.base.ok_or_else(|| input("--base is required"))?,
            }],
        };
        for spec in &specs {
            spec.validate().map_err(input)?;
        }
        Ok(specs)
    }
}

#[derive(Debug, Clone, Args)]
pub struct EstimationArgs {
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 101)]
    pub grid_size: usize,
    /// Dose kernel bandwidth: auto or a positive number.
    #[arg(long, default_value = "auto", value_parser = parse_bandwidth)]
    pub bandwidth: Bandwidth,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.95)]
    pub ci_level: f64,
    /// Weight untreated residuals by (1-π)/π instead of π/(1-π).
    #[arg(long)]
    pub literal_phi2_weight: bool,
    /// Outcome learner: ols, ridge:LAMBDA or kernel:BANDWIDTH.
    #[arg(long, default_value = "ols", value_parser = parse_learner)]
    pub outcome_learner: LearnerSpec,
    /// Treatment propensity learner: logistic, ols, ridge:LAMBDA or kernel:BANDWIDTH.
    #[arg(long, default_value = "logistic", value_parser = parse_learner)]
    pub propensity_learner: LearnerSpec,
    #[arg(long, value_enum, default_value = "linear")]
    pub dose_basis: BasisArg,
}

impl EstimationArgs {
    fn validate(&self) -> Result<(), CliError> {
        if self.folds < 2 {
            return Err(input(format!("--folds must be at least 2, got {}", self.folds)));
        }
        if self.grid_size < MIN_GRID_SIZE {
            return Err(input(format!(
                "--grid-size must be at least {MIN_GRID_SIZE}, got {}",
                self.grid_size
            )));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(input(format!("--ci-level must lie in (0, 1), got {}", self.ci_level)));
        }
        Ok(())
    }

    fn learners(&self) -> LearnerSet {
        LearnerSet {
            outcome: self.outcome_learner,
            propensity: self.propensity_learner,
            dose_basis: match self.dose_basis {
                BasisArg::Linear => DoseBasis::Linear,
                BasisArg::Quadratic => DoseBasis::Quadratic,
            },
            bandwidth: self.bandwidth,
        }
    }

    fn weight(&self) -> CorrectionWeight {
        if self.literal_phi2_weight {
            CorrectionWeight::InverseOdds
        } else {
            CorrectionWeight::Odds
        }
    }

    fn options(&self) -> EstimatorOptions {
        EstimatorOptions {
            grid_size: self.grid_size,
            ci_level: self.ci_level,
            weight: self.weight(),
            retain_eif: false,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    /// Panel CSV file.
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated covariate columns; defaults to every column other
    /// than y0, y1 and a.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    #[command(flatten)]
    pub intervention: InterventionArgs,
    #[command(flatten)]
    pub estimation: EstimationArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 1)]
    pub scenario: u8,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 300)]
    pub reps: usize,
    /// Use n = 5000 and 1000 replicates.
    #[arg(long)]
    pub full_scale: bool,
    /// Tilt increments as lo:hi:step.
    #[arg(long, allow_hyphen_values = true, default_value = DEFAULT_DELTA_GRID)]
    pub delta_grid: DeltaGrid,
    #[arg(long, default_value_t = 1_000_000)]
    pub oracle_draws: usize,
    /// Use the true nuisance functions instead of fitted ones.
    #[arg(long)]
    pub oracle_nuisances: bool,
    /// Constant added to the untreated outcome regression (with --oracle-nuisances).
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true, requires = "oracle_nuisances")]
    pub untreated_shift: f64,
    #[command(flatten)]
    pub estimation: EstimationArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Write per-replicate estimates in long format to this CSV.
    #[arg(long)]
    pub emit_plot_data: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DensityArgs {
    /// Fit the observed dose density from this panel CSV instead of using
    /// --base; curves are averaged over treated units.
    #[arg(long, conflicts_with = "base")]
    pub input: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    #[command(flatten)]
    pub intervention: InterventionArgs,
    #[arg(long, default_value_t = 101)]
    pub grid_size: usize,
    #[arg(long, default_value = "auto", value_parser = parse_bandwidth)]
    pub bandwidth: Bandwidth,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 1)]
    pub scenario: u8,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

/// Parse the process arguments and run; returns the exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("{}", input("--threads must be positive"));
            return EXIT_INPUT;
        }
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let outcome = match &cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::DensityCurve(args) => cmd_density_curve(args),
        Command::Generate(args) => cmd_generate(args),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn load_panel(path: &Path, covariates: &Option<Vec<String>>) -> Result<PanelDataset, CliError> {
    let names = match covariates {
        Some(names) => names.clone(),
        None => extra_columns(path).map_err(input)?,
    };
    load_csv(path, &names).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn label(spec: &InterventionSpec) -> String {
    spec.label_value().map(|v| v.to_string()).unwrap_or_default()
}

/// One output row: a one-step estimate with inference or a bare plug-in.
#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
enum Reported {
    OneStep(EstimateResult),
    PlugIn(PluginEstimate),
}

impl Reported {
    fn csv_fields(&self) -> [String; 5] {
        match self {
            Self::OneStep(e) => [
                e.intervention.as_ref().map(label).unwrap_or_default(),
                e.psi_hat.to_string(),
                e.se.to_string(),
                e.ci_low.to_string(),
                e.ci_high.to_string(),
            ],
            Self::PlugIn(p) => [label(&p.intervention), p.psi_hat.to_string(), String::new(), String::new(), String::new()],
        }
    }
}

fn render_estimates(rows: &[Reported], format: Format) -> Result<Vec<u8>, CliError> {
    match format {
        Format::Json => serde_json::to_vec_pretty(rows).map_err(runtime),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["delta", "psi_hat", "se", "ci_low", "ci_high"]).map_err(runtime)?;
            for row in rows {
                w.write_record(row.csv_fields()).map_err(runtime)?;
            }
            w.into_inner().map_err(runtime)
        }
    }
}

fn cmd_estimate(args: &EstimateArgs) -> Result<(), CliError> {
    args.estimation.validate()?;
    let specs = args.intervention.specs()?;
    let data = load_panel(&args.input, &args.covariates)?;
    let learners = args.estimation.learners();
    let est = &args.estimation;
    let options = est.options();

    let rows: Vec<Reported> = match args.intervention.intervention {
        Family::Tilt => {
            // one fold split and one nuisance fit per fold serve every increment
            let grid = DoseGrid::shared(est.grid_size).map_err(input)?;
            let folds = assign_folds(&data, est.folds, est.seed).map_err(runtime)?;
            let targets: Vec<OneStepTarget> = specs
                .iter()
                .map(|s| OneStepTarget::from_spec(s, &grid))
                .collect::<Result<_, _>>()
                .map_err(runtime)?;
            crossfit(&data, &folds, &learners, &grid, &targets, &options)
                .map_err(runtime)?
                .into_iter()
                .map(Reported::OneStep)
                .collect()
        }
        Family::Shift | Family::Parametric => vec![Reported::OneStep(
            onestep_crossfit(&data, &specs[0], est.folds, est.seed, &learners, &options).map_err(runtime)?,
        )],
        Family::Kernel | Family::Mindose => {
            eprintln!("warning: no influence-function standard error exists for this intervention; reporting the plug-in estimate only");
            vec![Reported::PlugIn(
                plugin_estimate(&data, &specs[0], &learners, est.grid_size).map_err(runtime)?,
            )]
        }
    };

    let mut table = String::new();
    let level = (est.ci_level * 100.0).to_string();
    let _ = writeln!(table, "{:>10} {:>12} {:>10} {:>26}", "param", "estimate", "se", format!("{level}% CI"));
    for row in &rows {
        let [param, psi, se, lo, hi] = row.csv_fields();
        let ci = if lo.is_empty() {
            "-".to_string()
        } else {
            format!("[{:.4}, {:.4}]", lo.parse::<f64>().unwrap_or(f64::NAN), hi.parse::<f64>().unwrap_or(f64::NAN))
        };
        let se = se.parse::<f64>().map(|v| format!("{v:.4}")).unwrap_or_else(|_| "-".into());
        let psi = psi.parse::<f64>().map(|v| format!("{v:.4}")).unwrap_or(psi);
        let _ = writeln!(table, "{param:>10} {psi:>12} {se:>10} {ci:>26}");
    }
    print!("{table}");

    if let Some(path) = &args.output.output {
        write_file(path, &render_estimates(&rows, args.output.format)?)?;
    }
    Ok(())
}

fn study_error(e: SimulationError) -> CliError {
    match e {
        SimulationError::UnknownScenario(_)
        | SimulationError::SampleTooSmall(_)
        | SimulationError::TooFewReplicates(_)
        | SimulationError::TooFewOracleDraws(_)
        | SimulationError::EmptyDeltaGrid => input(e),
        other => runtime(other),
    }
}

fn render_study(result: &StudyResult, format: Format) -> Result<Vec<u8>, CliError> {
    match format {
        Format::Json => serde_json::to_vec_pretty(result).map_err(runtime),
        Format::Csv => {
            let mut buf = Vec::new();
            result.write_summary_csv(&mut buf).map_err(runtime)?;
            Ok(buf)
        }
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let est = &args.estimation;
    est.validate()?;
    let scenario = Scenario::try_from(args.scenario).map_err(input)?;
    let (n, reps) = if args.full_scale { (5000, 1000) } else { (args.n, args.reps) };
    let mut config = StudyConfig::new(scenario, args.delta_grid.0.clone(), n, reps, est.folds, est.seed);
    config.grid_size = est.grid_size;
    config.ci_level = est.ci_level;
    config.weight = est.weight();
    config.oracle_draws = args.oracle_draws;
    config.nuisance = if args.oracle_nuisances {
        StudyNuisance::Oracle {
            mu_untreated_shift: args.untreated_shift,
        }
    } else {
        StudyNuisance::Learned(est.learners())
    };
    config.validate().map_err(study_error)?;

    let result = run_study(&config).map_err(study_error)?;
    eprintln!("completed {reps} replicates in {:.1?}", result.runtime);
    println!(
        "{:>8} {:>10} {:>10} {:>10} {:>9} {:>9}",
        "delta", "truth", "mean_psi", "bias", "mc_se", "coverage"
    );
    for r in &result.rows {
        println!(
            "{:>8} {:>10.4} {:>10.4} {:>10.4} {:>9.4} {:>9.3}",
            r.delta, r.truth, r.mean_psi, r.bias, r.mc_se, r.coverage
        );
    }

    let summary = render_study(&result, args.output.format)?;
    let plot = match &args.emit_plot_data {
        Some(_) => {
            let mut buf = Vec::new();
            result.write_plot_csv(&mut buf).map_err(runtime)?;
            Some(buf)
        }
        None => None,
    };
    if let Some(path) = &args.output.output {
        write_file(path, &summary)?;
    }
    if let (Some(path), Some(bytes)) = (&args.emit_plot_data, plot) {
        write_file(path, &bytes)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct CurveRecord {
    intervention: InterventionSpec,
    d: Vec<f64>,
    q: Vec<f64>,
}

/// Counterfactual curves for each spec. From a CSV the conditional curves
/// of the treated units are averaged.
fn density_curves(args: &DensityArgs, specs: &[InterventionSpec]) -> Result<Vec<DensityCurve>, CliError> {
    let grid = DoseGrid::shared(args.grid_size).map_err(input)?;
    match (&args.input, args.intervention.base) {
        (Some(path), _) => {
            let data = load_panel(path, &args.covariates)?;
            let treated = data.treated_rows();
            let fit = fit_dose_density(&data, &treated, &grid, args.bandwidth).map_err(runtime)?;
            let observed: Vec<DensityCurve> =
                treated.iter().map(|&i| fit.density(data.covariates(i)).curve).collect();
            specs
                .iter()
                .map(|spec| {
                    let mut sum = vec![0.0; grid.len()];
                    for pi in &observed {
                        let q = spec.apply(pi).map_err(runtime)?;
                        sum.iter_mut().zip(q.values()).for_each(|(s, v)| *s += v);
                    }
                    let values = sum.iter().map(|s| s / observed.len() as f64).collect();
                    DensityCurve::normalized(grid.clone(), values).map_err(runtime)
                })
                .collect()
        }
        (None, Some(base)) => {
            let pi = parametric_density(&base, &grid).map_err(input)?;
            specs.iter().map(|spec| spec.apply(&pi).map_err(input)).collect()
        }
        (None, None) => Err(input("density-curve needs --base or --input")),
    }
}

fn cmd_density_curve(args: &DensityArgs) -> Result<(), CliError> {
    if args.grid_size < MIN_GRID_SIZE {
        return Err(input(format!(
            "--grid-size must be at least {MIN_GRID_SIZE}, got {}",
            args.grid_size
        )));
    }
    // with --base and the parametric family the base is the curve itself
    let specs = args.intervention.specs()?;
    let curves = density_curves(args, &specs)?;

    let bytes = match args.output.format {
        Format::Json => {
            let records: Vec<CurveRecord> = specs
                .iter()
                .zip(&curves)
                .map(|(spec, q)| CurveRecord {
                    intervention: *spec,
                    d: q.grid().points().to_vec(),
                    q: q.values().to_vec(),
                })
                .collect();
            serde_json::to_vec_pretty(&records).map_err(runtime)?
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["delta", "d", "q"]).map_err(runtime)?;
            for (spec, q) in specs.iter().zip(&curves) {
                let param = label(spec);
                for (d, v) in q.grid().points().iter().zip(q.values()) {
                    w.write_record([param.clone(), d.to_string(), v.to_string()]).map_err(runtime)?;
                }
            }
            w.into_inner().map_err(runtime)?
        }
    };
    for (spec, q) in specs.iter().zip(&curves) {
        println!("{:>10}  mean {:.4}  mode {:.4}", label(spec), q.mean(), q.mode());
    }
    match &args.output.output {
        Some(path) => write_file(path, &bytes),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&bytes).map_err(runtime)
        }
    }
}

fn cmd_generate(args: &GenerateArgs) -> Result<(), CliError> {
    let spec = ScenarioSpec {
        scenario: Scenario::try_from(args.scenario).map_err(input)?,
        n: args.n,
        seed: args.seed,
    };
    let data = simulate_scenario(&spec).map_err(study_error)?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf).map_err(runtime)?;
    write_file(&args.output, &buf)?;
    eprintln!(
        "wrote {} units ({} treated) to {}",
        data.len(),
        data.treated_count(),
        args.output.display()
    );
    Ok(())
}
