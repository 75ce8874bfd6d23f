//! Command-line front end: CSV ingestion, key=value configuration and the
//! `fit`, `replicate`, `approx-check` and `compare` subcommands.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use crate::cavi::{self, FitConfig};
use crate::error::{FitError, IngestError, ModelError, ReferenceError, SimulationError};
use crate::model::{PriorSpec, SurvivalDataset, SurvivalObservation};
use crate::piecewise::{
    fit_linear_breakpoints, linear_table_sse, max_abs_error, quadratic_table_sse, softplus_linear,
    softplus_quadratic, LINEAR_TABLE,
};
use crate::posterior::{acceleration_factor, summarize_coefficients, summarize_scale, ParameterSummary};
use crate::reference::{fit_mle, sample_posterior_with, McmcConfig, ProposalKind};
use crate::simulate::{
    generate_dataset, run_replication, write_report_csv, Method, ReplicationOptions,
    SimulationScenario,
};

pub const EXIT_SUCCESS: i32 = 0;
pub const EXIT_NUMERICAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    /// bad flags, config values or unreadable/unwritable files
    Usage(String),
    /// a fit or sampler broke down
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::InvalidConfig(_) | FitError::Model(ModelError::ParameterDimension { .. }) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<ReferenceError> for CliError {
    fn from(e: ReferenceError) -> Self {
        match e {
            ReferenceError::InvalidSampler(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        match e {
            SimulationError::InvalidScenario(_) | SimulationError::Io(_) => {
                CliError::Usage(e.to_string())
            }
            SimulationError::Model(ModelError::ParameterDimension { .. }) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: io::Error) -> CliError {
    CliError::Usage(format!("cannot write {}: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// ingestion

fn parse_number(field: &str, line: usize, column: &str) -> Result<f64, IngestError> {
    field.trim().parse::<f64>().map_err(|_| IngestError::Parse {
        line,
        column: column.to_string(),
        value: field.to_string(),
    })
}

/// Reads `time`, `status` and covariate columns (in file order) from a CSV
/// file with a header row. An intercept column is prepended.
pub fn ingest_csv(path: &Path) -> Result<SurvivalDataset, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ingest_reader(file)
}

pub fn ingest_reader<R: io::Read>(reader: R) -> Result<SurvivalDataset, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let time_col = headers
        .iter()
        .position(|h| h == "time")
        .ok_or(IngestError::MissingColumn("time"))?;
    let status_col = headers
        .iter()
        .position(|h| h == "status")
        .ok_or(IngestError::MissingColumn("status"))?;
    let covariate_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != time_col && c != status_col)
        .collect();
    if covariate_cols.is_empty() {
        return Err(IngestError::NoCovariates);
    }
    let mut observations = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        // header is line 1
        let line = row + 2;
        if record.len() != headers.len() {
            return Err(IngestError::RowLength {
                line,
                expected: headers.len(),
                actual: record.len(),
            });
        }
        let time = parse_number(&record[time_col], line, "time")?;
        if !(time > 0.0) || !time.is_finite() {
            return Err(IngestError::NonPositiveTime { line, value: time });
        }
        let event = match record[status_col].trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(IngestError::InvalidStatus {
                    line,
                    value: other.to_string(),
                })
            }
        };
        let mut covariates = Vec::with_capacity(covariate_cols.len() + 1);
        covariates.push(1.0);
        for &c in &covariate_cols {
            covariates.push(parse_number(&record[c], line, &headers[c])?);
        }
        observations.push(SurvivalObservation::from_time(time, event, covariates)?);
    }
    if observations.is_empty() {
        return Err(IngestError::Empty);
    }
    let mut names = vec!["intercept".to_string()];
    names.extend(covariate_cols.iter().map(|&c| headers[c].clone()));
    Ok(SurvivalDataset::with_names(names, observations)?)
}

/// Writes `time,status,<covariates>` in the format read by [`ingest_csv`].
pub fn write_dataset_csv<W: Write>(data: &SurvivalDataset, out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string(), "status".to_string()];
    header.extend(data.covariate_names().iter().skip(1).cloned());
    w.write_record(&header)?;
    for o in data.observations() {
        let mut row = vec![o.time.to_string(), if o.event { "1" } else { "0" }.to_string()];
        row.extend(o.covariates.iter().skip(1).map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()
}

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PriorPreset {
    /// μ₀ = 0, v₀ = 0.1, α₀ = 11, ω₀ = 10
    Weak,
    /// μ₀ = (0.3, 0.1, 1.0), v₀ = 0.15, α₀ = 11, ω₀ = 8
    Strong,
    /// μ₀ = (4.4, 0.25, 0.04), v₀ = 1, α₀ = 501, ω₀ = 500
    Rhdnase,
}

impl PriorPreset {
    fn parse(s: &str) -> Option<Self> {
        <Self as ValueEnum>::from_str(s, true).ok()
    }

    fn prior(&self, p: usize) -> PriorSpec {
        match self {
            PriorPreset::Weak => PriorSpec::weak(p),
            PriorPreset::Strong => PriorSpec::strong(),
            PriorPreset::Rhdnase => PriorSpec::rhdnase(),
        }
    }
}

/// Flat key=value file. Blank lines and lines starting with `#` are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("config line {}: expected key=value, got {raw:?}", i + 1))
        })?;
        let key = key.trim().replace('-', "_");
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(CliError::Usage(format!(
                "config line {}: unknown key `{key}`",
                i + 1
            )));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

pub const CONFIG_KEYS: &[&str] = &[
    "data",
    "prior",
    "prior_mean",
    "prior_precision",
    "prior_shape",
    "prior_rate",
    "elbo_tol",
    "max_iter",
    "methods",
    "seed",
    "out",
    "level",
    "n",
    "censor_u",
    "replicates",
    "mcmc_iter",
    "mcmc_burn_in",
    "mcmc_proposal",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProposalArg {
    Diagonal,
    Full,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// key=value configuration file; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// prior preset loaded before the individual prior overrides
    #[arg(long, value_enum)]
    pub prior: Option<PriorPreset>,
    /// comma-separated prior mean μ₀
    #[arg(long, allow_hyphen_values = true)]
    pub prior_mean: Option<String>,
    /// prior precision v₀ of the coefficients
    #[arg(long)]
    pub prior_precision: Option<f64>,
    /// Inverse-Gamma prior shape α₀
    #[arg(long)]
    pub prior_shape: Option<f64>,
    /// Inverse-Gamma prior rate ω₀
    #[arg(long)]
    pub prior_rate: Option<f64>,
    /// absolute ELBO change that stops the iteration [default: 0.01]
    #[arg(long)]
    pub elbo_tol: Option<f64>,
    /// iteration cap [default: 100]
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// comma-separated subset of vb,mle,mcmc
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// output CSV path
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// credible / confidence level [default: 0.95]
    #[arg(long)]
    pub level: Option<f64>,
    /// Metropolis iterations including burn-in [default: 5000]
    #[arg(long)]
    pub mcmc_iter: Option<usize>,
    /// Metropolis burn-in [default: 1000]
    #[arg(long)]
    pub mcmc_burn_in: Option<usize>,
    /// Metropolis proposal shape [default: diagonal]
    #[arg(long, value_enum)]
    pub mcmc_proposal: Option<ProposalArg>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ScenarioArgs {
    /// sample size per simulated dataset [default: 300]
    #[arg(long)]
    pub n: Option<usize>,
    /// upper end u of Uniform(0, u) censoring; 0 means none [default: 0]
    #[arg(long)]
    pub censor_u: Option<f64>,
}

#[derive(Debug, Parser)]
#[command(name = "vbsurv", version, about = "Variational Bayes for log-logistic AFT survival models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a survival CSV with VB and optionally MLE / MCMC
    Fit {
        /// CSV with `time`, `status` and covariate columns
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Simulation study over replicated synthetic datasets
    Replicate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// number of replicates [default: 100]
        #[arg(long)]
        replicates: Option<usize>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Audit the piecewise softplus approximations
    ApproxCheck {
        /// grid points on [-5, 5]
        #[arg(long, default_value_t = 10_000)]
        grid: usize,
        /// largest breakpoint count searched
        #[arg(long, default_value_t = 5)]
        max_breakpoints: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run all methods on one dataset and report estimates and timings
    Compare {
        /// CSV to fit; a simulated dataset is used when absent
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
}

/// Fully resolved settings after merging the config file and flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub prior: PriorSpec,
    pub fit: FitConfig,
    pub methods: Vec<Method>,
    pub output_path: Option<PathBuf>,
    pub seed: u64,
    pub level: f64,
    pub mcmc_iterations: usize,
    pub mcmc_burn_in: usize,
    pub mcmc_proposal: ProposalKind,
}

struct Settings {
    file: BTreeMap<String, String>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Usage(format!("cannot read config {}: {e}", p.display()))
                })?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Self { file })
    }

    fn get<T: std::str::FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("config key `{key}`: invalid value {v:?}"))),
            None => Ok(None),
        }
    }

    fn string(&self, flag: Option<String>, key: &str) -> Option<String> {
        flag.or_else(|| self.file.get(key).cloned())
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split([',', ';'])
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("cannot parse {v:?} in list {s:?}")))
        })
        .collect()
}

fn parse_methods(s: &str) -> Result<Vec<Method>, CliError> {
    let mut out = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let m = Method::parse(part)
            .ok_or_else(|| CliError::Usage(format!("unknown method {part:?} (use vb, mle, mcmc)")))?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("no methods selected".into()));
    }
    Ok(out)
}

fn resolve(
    common: &CommonArgs,
    settings: &Settings,
    p: usize,
    default_methods: &[Method],
) -> Result<RunConfig, CliError> {
    let preset = match settings.string(None, "prior") {
        _ if common.prior.is_some() => common.prior,
        Some(s) => Some(
            PriorPreset::parse(&s)
                .ok_or_else(|| CliError::Usage(format!("unknown prior preset {s:?}")))?,
        ),
        None => None,
    };
    let base = preset.unwrap_or(PriorPreset::Weak).prior(p);
    let mean = match settings.string(common.prior_mean.clone(), "prior_mean") {
        Some(s) => DVector::from_vec(parse_list(&s)?),
        None => base.coef_mean.clone(),
    };
    if mean.len() != p {
        return Err(CliError::Usage(format!(
            "prior mean has {} entries but the model has {p} coefficients",
            mean.len()
        )));
    }
    let prior = PriorSpec::new(
        mean,
        settings.get(common.prior_precision, "prior_precision")?.unwrap_or(base.coef_precision),
        settings.get(common.prior_shape, "prior_shape")?.unwrap_or(base.scale_shape),
        settings.get(common.prior_rate, "prior_rate")?.unwrap_or(base.scale_rate),
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;

    let defaults = FitConfig::default();
    let fit = FitConfig {
        elbo_tolerance: settings.get(common.elbo_tol, "elbo_tol")?.unwrap_or(defaults.elbo_tolerance),
        max_iterations: settings.get(common.max_iter, "max_iter")?.unwrap_or(defaults.max_iterations),
        ..defaults
    };
    fit.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let methods = match settings.string(common.methods.clone(), "methods") {
        Some(s) => parse_methods(&s)?,
        None => default_methods.to_vec(),
    };
    let level = settings.get(common.level, "level")?.unwrap_or(0.95);
    if !(level > 0.0 && level < 1.0) {
        return Err(CliError::Usage(format!("level must lie in (0, 1), got {level}")));
    }
    let proposal_flag = common.mcmc_proposal;
    let proposal = match proposal_flag {
        Some(p) => p,
        None => match settings.string(None, "mcmc_proposal") {
            Some(s) => <ProposalArg as ValueEnum>::from_str(&s, true)
                .map_err(|_| CliError::Usage(format!("unknown proposal {s:?}")))?,
            None => ProposalArg::Diagonal,
        },
    };
    Ok(RunConfig {
        prior,
        fit,
        methods,
        output_path: settings.get(common.out.clone(), "out")?,
        seed: settings.get(common.seed, "seed")?.unwrap_or(1),
        level,
        mcmc_iterations: settings.get(common.mcmc_iter, "mcmc_iter")?.unwrap_or(5_000),
        mcmc_burn_in: settings.get(common.mcmc_burn_in, "mcmc_burn_in")?.unwrap_or(1_000),
        mcmc_proposal: match proposal {
            ProposalArg::Diagonal => ProposalKind::Diagonal,
            ProposalArg::Full => ProposalKind::FullCovariance,
        },
    })
}

// ---------------------------------------------------------------------------
// output helpers

/// Six significant digits, fixed notation where reasonable.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..=9).contains(&mag) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

fn render_table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width = vec![0; cols];
    for row in std::iter::once(header).chain(rows.iter().map(|r| r.as_slice())) {
        for (c, cell) in row.iter().enumerate() {
            width[c] = width[c].max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for row in std::iter::once(header).chain(rows.iter().map(|r| r.as_slice())) {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if c == 0 {
                    format!("{cell:<w$}", w = width[c])
                } else {
                    format!("{cell:>w$}", w = width[c])
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_error(path, e))
}

/// Estimates from one method on one dataset.
#[derive(Debug, Clone)]
pub struct MethodFit {
    pub method: Method,
    pub summaries: Vec<ParameterSummary>,
    pub seconds: f64,
    pub note: Option<String>,
}

fn fit_methods(data: &SurvivalDataset, config: &RunConfig) -> Result<Vec<MethodFit>, CliError> {
    let names = data.covariate_names();
    let mut fits = Vec::new();
    for &method in &config.methods {
        let start = Instant::now();
        let (summaries, note) = match method {
            Method::Vb => {
                let state = cavi::fit(data, &config.prior, &config.fit)?;
                let mut s = summarize_coefficients(&state, names, config.level)
                    .map_err(|e| CliError::Numerical(e.to_string()))?;
                s.push(summarize_scale(&state, config.level).map_err(|e| CliError::Numerical(e.to_string()))?);
                let note = format!(
                    "{} iterations, stop: {:?}",
                    state.iterations,
                    state.stop_reason.expect("set by fit")
                );
                (s, Some(note))
            }
            Method::Mle => {
                let mle = fit_mle(data)?;
                let s = mle.wald_intervals(names, config.level)?;
                (s, Some("Wald intervals; scale interval formed on log b".to_string()))
            }
            Method::Mcmc => {
                let mc = McmcConfig {
                    n_iterations: config.mcmc_iterations,
                    burn_in: config.mcmc_burn_in,
                    seed: config.seed,
                    stream: 0,
                    proposal: config.mcmc_proposal,
                };
                let chain = sample_posterior_with(data, &config.prior, &mc)?;
                let note = format!(
                    "acceptance {:.3}{}",
                    chain.acceptance_rate,
                    chain.warning.as_deref().map(|w| format!("; warning: {w}")).unwrap_or_default()
                );
                (chain.summaries(names, config.level), Some(note))
            }
        };
        fits.push(MethodFit {
            method,
            summaries,
            seconds: start.elapsed().as_secs_f64(),
            note,
        });
    }
    Ok(fits)
}

fn write_fit_csv<W: Write>(mut out: W, fits: &[MethodFit]) -> io::Result<()> {
    writeln!(out, "method,parameter,estimate,sd,low,high,interval")?;
    for f in fits {
        for s in &f.summaries {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                f.method.label(),
                s.name,
                s.mean,
                s.sd.map(|v| v.to_string()).unwrap_or_else(|| "NA".into()),
                s.interval_low,
                s.interval_high,
                s.interval_kind
            )?;
        }
    }
    out.flush()
}

fn fit_text(fits: &[MethodFit], level: f64) -> String {
    let mut header = vec!["parameter".to_string()];
    for f in fits {
        let l = f.method.label();
        header.push(format!("{l} est"));
        header.push(format!("{l} sd"));
        header.push(format!("{l} {:.0}% interval", level * 100.0));
    }
    let n_params = fits.first().map_or(0, |f| f.summaries.len());
    let mut rows = Vec::new();
    for k in 0..n_params {
        let mut row = vec![fits[0].summaries[k].name.clone()];
        for f in fits {
            let s = &f.summaries[k];
            row.push(sig6(s.mean));
            row.push(s.sd.map(sig6).unwrap_or_else(|| "NA".into()));
            row.push(format!("[{}, {}] {}", sig6(s.interval_low), sig6(s.interval_high), s.interval_kind));
        }
        rows.push(row);
    }
    let mut text = render_table(&header, &rows);
    // acceleration factors for the covariate effects
    let mut af_rows = Vec::new();
    for k in 1..n_params.saturating_sub(1) {
        let mut row = vec![format!("exp({})", fits[0].summaries[k].name)];
        for f in fits {
            let a = acceleration_factor(&f.summaries[k]);
            row.push(format!("{} [{}, {}]", sig6(a.mean), sig6(a.interval_low), sig6(a.interval_high)));
        }
        af_rows.push(row);
    }
    if !af_rows.is_empty() {
        let mut h = vec!["acceleration factor".to_string()];
        h.extend(fits.iter().map(|f| f.method.label().to_string()));
        text.push('\n');
        text.push_str(&render_table(&h, &af_rows));
    }
    text.push('\n');
    for f in fits {
        text.push_str(&format!(
            "{}: {:.3} ms{}\n",
            f.method.label(),
            f.seconds * 1e3,
            f.note.as_deref().map(|n| format!(" ({n})")).unwrap_or_default()
        ));
    }
    text
}

// ---------------------------------------------------------------------------
// commands

fn load_data(data: Option<PathBuf>, settings: &Settings) -> Result<SurvivalDataset, CliError> {
    let path: PathBuf = settings
        .get(data, "data")?
        .ok_or_else(|| CliError::Usage("--data is required".into()))?;
    Ok(ingest_csv(&path)?)
}

pub fn cmd_fit(data: Option<PathBuf>, common: &CommonArgs) -> Result<String, CliError> {
    let settings = Settings::load(common.config.as_deref())?;
    let dataset = load_data(data, &settings)?;
    let config = resolve(common, &settings, dataset.p(), &[Method::Vb])?;
    let fits = fit_methods(&dataset, &config)?;
    if let Some(path) = &config.output_path {
        write_fit_csv(create(path)?, &fits).map_err(|e| io_error(path, e))?;
    }
    let mut text = format!(
        "n = {}, events = {}, covariates = {}\n\n",
        dataset.n(),
        dataset.events(),
        dataset.covariate_names()[1..].join(", ")
    );
    text.push_str(&fit_text(&fits, config.level));
    Ok(text)
}

fn scenario_from(
    scenario: &ScenarioArgs,
    replicates: Option<usize>,
    settings: &Settings,
    seed: u64,
) -> Result<SimulationScenario, CliError> {
    let n = settings.get(scenario.n, "n")?.unwrap_or(300);
    let u = settings.get(scenario.censor_u, "censor_u")?.unwrap_or(0.0);
    let reps = settings.get(replicates, "replicates")?.unwrap_or(100);
    Ok(SimulationScenario::new(n, u, reps, seed)?)
}

pub fn cmd_replicate(
    scenario_args: &ScenarioArgs,
    replicates: Option<usize>,
    common: &CommonArgs,
) -> Result<String, CliError> {
    let settings = Settings::load(common.config.as_deref())?;
    let config = resolve(common, &settings, 3, &[Method::Vb, Method::Mle])?;
    let scenario = scenario_from(scenario_args, replicates, &settings, config.seed)?;
    let options = ReplicationOptions {
        fit: config.fit,
        level: config.level,
        mcmc_iterations: config.mcmc_iterations,
        mcmc_burn_in: config.mcmc_burn_in,
        mcmc_proposal: config.mcmc_proposal,
    };
    let start = Instant::now();
    let outcome = run_replication(&scenario, &config.prior, &config.methods, &options)?;
    let elapsed = start.elapsed().as_secs_f64();
    if let Some(path) = &config.output_path {
        let mut w = create(path)?;
        write_report_csv(&mut w, &scenario, &config.prior, &options, &outcome.reports)?;
        w.flush().map_err(|e| io_error(path, e))?;
    }
    let header: Vec<String> = ["method", "parameter", "truth", "bias", "sd", "mse", "coverage %", "avg length"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for r in &outcome.reports {
        for p in &r.parameters {
            rows.push(vec![
                r.method.label().to_string(),
                p.name.clone(),
                sig6(p.truth),
                sig6(p.bias),
                sig6(p.sample_sd),
                sig6(p.mse),
                sig6(p.coverage_percent),
                sig6(p.avg_interval_length),
            ]);
        }
    }
    let mut text = format!(
        "n = {}, censoring u = {}, replicates = {}, seed = {}\n\n",
        scenario.n, scenario.censor_bound, scenario.n_replicates, scenario.seed
    );
    text.push_str(&render_table(&header, &rows));
    text.push('\n');
    for r in &outcome.reports {
        text.push_str(&format!(
            "{}: {} fits ok, {} failed, {:.3} s fitting time\n",
            r.method.label(),
            r.n_success,
            r.n_failed,
            r.wall_time
        ));
    }
    let capped = outcome
        .vb_traces
        .iter()
        .filter(|t| t.stop_reason == Some(cavi::StopReason::MaxIterations))
        .count();
    if !outcome.vb_traces.is_empty() {
        text.push_str(&format!("VB fits stopped at the iteration cap: {capped}\n"));
    }
    text.push_str(&format!("total wall time {elapsed:.3} s\n"));
    Ok(text)
}

/// Returns the report text and whether every audit passed.
pub fn cmd_approx_check(
    grid: usize,
    max_breakpoints: usize,
    out: Option<&Path>,
) -> Result<(String, bool), CliError> {
    if !(1..=5).contains(&max_breakpoints) {
        return Err(CliError::Usage("--max-breakpoints must be between 1 and 5".into()));
    }
    if grid < 10 {
        return Err(CliError::Usage("--grid must be at least 10".into()));
    }
    let fits: Vec<_> = (0..=max_breakpoints)
        .map(|k| fit_linear_breakpoints(grid, k))
        .collect();
    let lin = linear_table_sse(grid);
    let quad = quadratic_table_sse(grid);
    let lin_max = max_abs_error(softplus_linear, -8.0, 8.0, 100_000);
    let quad_max = max_abs_error(softplus_quadratic, -8.0, 8.0, 100_000);

    let header: Vec<String> = ["breakpoints", "SSE", "R^2", "positions"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = fits
        .iter()
        .enumerate()
        .map(|(k, f)| {
            vec![
                k.to_string(),
                sig6(f.sse),
                format!("{:.6}", f.r_squared),
                f.breakpoints.iter().map(|b| format!("{b:.2}")).collect::<Vec<_>>().join(" "),
            ]
        })
        .collect();
    let mut text = format!("continuous linear spline fits to log(1+exp(x)), {grid} points on [-5, 5]\n\n");
    text.push_str(&render_table(&header, &rows));

    let decreasing = fits.windows(2).all(|w| w[1].sse < w[0].sse);
    let lin_ok = (3.30..=3.40).contains(&lin);
    let quad_ok = (0.11..=0.13).contains(&quad);
    let knots_ok = fits.get(3).is_some_and(|f| {
        let reference = [LINEAR_TABLE.breakpoints[1], LINEAR_TABLE.breakpoints[2], LINEAR_TABLE.breakpoints[3]];
        f.sse <= 3.40 && f.breakpoints.iter().zip(reference).all(|(a, b)| (a - b).abs() <= 0.1)
    });
    let check = |ok: bool| if ok { "ok" } else { "FAIL" };
    text.push_str(&format!(
        "\nSSE decreasing in breakpoint count: {}\n",
        check(decreasing)
    ));
    if max_breakpoints >= 3 {
        text.push_str(&format!(
            "3-breakpoint search within 0.1 of (-1.701, 0, 1.702): {}\n",
            check(knots_ok)
        ));
    }
    text.push_str(&format!(
        "built-in linear table SSE {} (accept [3.30, 3.40]): {}\n",
        sig6(lin),
        check(lin_ok)
    ));
    text.push_str(&format!(
        "built-in quadratic table SSE {} (accept [0.11, 0.13]): {}\n",
        sig6(quad),
        check(quad_ok)
    ));
    text.push_str(&format!(
        "max abs error on [-8, 8]: linear {}, quadratic {}\n",
        sig6(lin_max),
        sig6(quad_max)
    ));
    if let Some(path) = out {
        let mut w = create(path)?;
        (|| -> io::Result<()> {
            writeln!(w, "breakpoints,sse,r_squared,positions")?;
            for (k, f) in fits.iter().enumerate() {
                let pos: Vec<String> = f.breakpoints.iter().map(|b| b.to_string()).collect();
                writeln!(w, "{k},{},{},{}", f.sse, f.r_squared, pos.join(";"))?;
            }
            writeln!(w, "linear_table,{lin},,")?;
            writeln!(w, "quadratic_table,{quad},,")?;
            w.flush()
        })()
        .map_err(|e| io_error(path, e))?;
    }
    let passed = decreasing && lin_ok && quad_ok && (max_breakpoints < 3 || knots_ok);
    Ok((text, passed))
}

pub fn cmd_compare(
    data: Option<PathBuf>,
    scenario_args: &ScenarioArgs,
    common: &CommonArgs,
) -> Result<String, CliError> {
    let settings = Settings::load(common.config.as_deref())?;
    let all = [Method::Vb, Method::Mle, Method::Mcmc];
    let (dataset, origin) = match settings.get(data, "data")? {
        Some(path) => {
            let d = ingest_csv(&path)?;
            (d, format!("{}", path.display()))
        }
        None => {
            let seed = settings.get(common.seed, "seed")?.unwrap_or(1);
            let scenario = scenario_from(scenario_args, Some(1), &settings, seed)?;
            let d = generate_dataset(&scenario, 0);
            (d, format!("simulated (n = {}, u = {}, seed = {seed})", scenario.n, scenario.censor_bound))
        }
    };
    let config = resolve(common, &settings, dataset.p(), &all)?;
    let fits = fit_methods(&dataset, &config)?;
    if let Some(path) = &config.output_path {
        write_fit_csv(create(path)?, &fits).map_err(|e| io_error(path, e))?;
    }
    let mut text = format!("data: {origin}; n = {}, events = {}\n\n", dataset.n(), dataset.events());
    text.push_str(&fit_text(&fits, config.level));
    if let Some(vb) = fits.iter().find(|f| f.method == Method::Vb) {
        for f in fits.iter().filter(|f| f.method != Method::Vb) {
            text.push_str(&format!(
                "{} / VB time ratio: {:.1}\n",
                f.method.label(),
                f.seconds / vb.seconds.max(1e-9)
            ));
        }
    }
    Ok(text)
}

/// Parses arguments, runs the command, prints its report and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_SUCCESS };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Fit { data, common } => cmd_fit(data, &common).map(|t| (t, true)),
        Command::Replicate {
            scenario,
            replicates,
            common,
        } => cmd_replicate(&scenario, replicates, &common).map(|t| (t, true)),
        Command::ApproxCheck {
            grid,
            max_breakpoints,
            out,
        } => cmd_approx_check(grid, max_breakpoints, out.as_deref()),
        Command::Compare {
            data,
            scenario,
            common,
        } => cmd_compare(data, &scenario, &common).map(|t| (t, true)),
    };
    match result {
        Ok((text, passed)) => {
            print!("{text}");
            if passed {
                EXIT_SUCCESS
            } else {
                EXIT_NUMERICAL
            }
        }
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
