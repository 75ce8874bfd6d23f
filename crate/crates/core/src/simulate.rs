//! Synthetic log-logistic AFT data and the replication study runner.

use std::io::Write;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::cavi::{self, FitConfig, IterationRecord, StopReason};
use crate::error::SimulationError;
use crate::model::{PriorSpec, SurvivalDataset, SurvivalObservation};
use crate::posterior::{summarize_coefficients, summarize_scale};
use crate::reference::{fit_mle, sample_posterior_with, McmcConfig, ProposalKind};
use crate::rng::{bernoulli, logistic, standard_normal, stream, uniform, StreamRole};

pub const PARAMETER_NAMES: [&str; 4] = ["beta0", "beta1", "beta2", "scale"];

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationScenario {
    pub true_coefficients: DVector<f64>,
    pub true_scale: f64,
    pub n: usize,
    /// Upper end u of the Uniform(0, u) censoring times; 0 disables censoring.
    pub censor_bound: f64,
    pub n_replicates: usize,
    pub seed: u64,
}

impl SimulationScenario {
    /// β = (0.5, 0.2, 0.8), b = 0.8.
    pub fn new(n: usize, censor_bound: f64, n_replicates: usize, seed: u64) -> Result<Self, SimulationError> {
        let scenario = Self {
            true_coefficients: DVector::from_vec(vec![0.5, 0.2, 0.8]),
            true_scale: 0.8,
            n,
            censor_bound,
            n_replicates,
            seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        if self.n == 0 {
            return Err(SimulationError::InvalidScenario("n must be at least 1".into()));
        }
        if self.n_replicates == 0 {
            return Err(SimulationError::InvalidScenario(
                "n_replicates must be at least 1".into(),
            ));
        }
        if !(self.censor_bound >= 0.0) || !self.censor_bound.is_finite() {
            return Err(SimulationError::InvalidScenario(format!(
                "censoring bound must be a nonnegative number, got {}",
                self.censor_bound
            )));
        }
        if self.true_coefficients.len() != 3 {
            return Err(SimulationError::InvalidScenario(
                "the generator draws two covariates, so three coefficients are needed".into(),
            ));
        }
        if !(self.true_scale > 0.0) {
            return Err(SimulationError::InvalidScenario(format!(
                "true scale must be positive, got {}",
                self.true_scale
            )));
        }
        Ok(())
    }

    pub fn truth(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.true_coefficients.iter().copied().collect();
        t.push(self.true_scale);
        t
    }
}

/// x₁ ~ N(1, 0.2²), x₂ ~ Bernoulli(0.5), log T = Xᵀβ + b z with z logistic, and
/// C ~ Uniform(0, u) when u > 0. Ties count as events.
pub fn generate_dataset(scenario: &SimulationScenario, replicate_index: usize) -> SurvivalDataset {
    let idx = replicate_index as u64;
    let mut cont = stream(scenario.seed, idx, StreamRole::ContinuousCovariate);
    let mut bin = stream(scenario.seed, idx, StreamRole::BinaryCovariate);
    let mut noise = stream(scenario.seed, idx, StreamRole::Noise);
    let mut cens = stream(scenario.seed, idx, StreamRole::Censoring);
    let beta = &scenario.true_coefficients;
    let observations = (0..scenario.n)
        .map(|_| {
            let x1 = 1.0 + 0.2 * standard_normal(&mut cont);
            let x2 = if bernoulli(&mut bin, 0.5) { 1.0 } else { 0.0 };
            let z = logistic(&mut noise);
            let event_time = (beta[0] + beta[1] * x1 + beta[2] * x2 + scenario.true_scale * z).exp();
            let (time, event) = if scenario.censor_bound > 0.0 {
                let c = scenario.censor_bound * uniform(&mut cens);
                (event_time.min(c), event_time <= c)
            } else {
                (event_time, true)
            };
            SurvivalObservation::from_time(time, event, vec![1.0, x1, x2])
                .expect("exp() of a finite value is positive")
        })
        .collect();
    let names = vec!["intercept".into(), "x1".into(), "x2".into()];
    SurvivalDataset::with_names(names, observations).expect("generated rows are valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Vb,
    Mle,
    Mcmc,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Vb => "VB",
            Method::Mle => "MLE",
            Method::Mcmc => "MCMC",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vb" => Some(Method::Vb),
            "mle" => Some(Method::Mle),
            "mcmc" => Some(Method::Mcmc),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOptions {
    pub fit: FitConfig,
    pub level: f64,
    pub mcmc_iterations: usize,
    pub mcmc_burn_in: usize,
    pub mcmc_proposal: ProposalKind,
}

impl Default for ReplicationOptions {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            level: 0.95,
            mcmc_iterations: 5_000,
            mcmc_burn_in: 1_000,
            mcmc_proposal: ProposalKind::default(),
        }
    }
}

/// Point estimates and interval endpoints for (β₀, β₁, β₂, b) from one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub point: Vec<f64>,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterRecord {
    pub name: String,
    pub truth: f64,
    pub bias: f64,
    pub sample_sd: f64,
    pub mse: f64,
    pub coverage_percent: f64,
    pub avg_interval_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationReport {
    pub method: Method,
    pub parameters: Vec<ParameterRecord>,
    pub n_success: usize,
    pub n_failed: usize,
    pub wall_time: f64,
}

/// Per-replicate CAVI diagnostics, kept for trace audits.
#[derive(Debug, Clone, PartialEq)]
pub struct VbTrace {
    pub replicate: usize,
    pub expected_shape: f64,
    pub history: Vec<IterationRecord>,
    pub stop_reason: Option<StopReason>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub reports: Vec<ReplicationReport>,
    pub vb_traces: Vec<VbTrace>,
}

/// Bias, SD (N − 1 denominator), MSE, coverage of the closed interval, and
/// mean interval length for one parameter.
pub fn aggregate(name: &str, truth: f64, point: &[f64], low: &[f64], high: &[f64]) -> ParameterRecord {
    let n = point.len() as f64;
    let mean = point.iter().sum::<f64>() / n;
    let var = if point.len() > 1 {
        point.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let mse = point.iter().map(|v| (v - truth).powi(2)).sum::<f64>() / n;
    let covered = low
        .iter()
        .zip(high)
        .filter(|(l, h)| **l <= truth && truth <= **h)
        .count();
    let length = low.iter().zip(high).map(|(l, h)| h - l).sum::<f64>() / n;
    ParameterRecord {
        name: name.to_string(),
        truth,
        bias: mean - truth,
        sample_sd: var.sqrt(),
        mse,
        coverage_percent: 100.0 * covered as f64 / n,
        avg_interval_length: length,
    }
}

fn vb_estimate(
    data: &SurvivalDataset,
    prior: &PriorSpec,
    options: &ReplicationOptions,
    replicate: usize,
) -> Result<(Estimate, VbTrace), String> {
    let state = cavi::fit(data, prior, &options.fit).map_err(|e| e.to_string())?;
    let coefs = summarize_coefficients(&state, data.covariate_names(), options.level)
        .map_err(|e| e.to_string())?;
    let scale = summarize_scale(&state, options.level).map_err(|e| e.to_string())?;
    let all: Vec<_> = coefs.iter().chain(std::iter::once(&scale)).collect();
    let estimate = Estimate {
        point: all.iter().map(|s| s.mean).collect(),
        low: all.iter().map(|s| s.interval_low).collect(),
        high: all.iter().map(|s| s.interval_high).collect(),
    };
    let trace = VbTrace {
        replicate,
        expected_shape: prior.scale_shape + data.events() as f64,
        history: state.history,
        stop_reason: state.stop_reason,
    };
    Ok((estimate, trace))
}

fn mle_estimate(data: &SurvivalDataset, level: f64) -> Result<Estimate, String> {
    let mle = fit_mle(data).map_err(|e| e.to_string())?;
    let intervals = mle
        .wald_intervals(data.covariate_names(), level)
        .map_err(|e| e.to_string())?;
    Ok(Estimate {
        point: intervals.iter().map(|s| s.mean).collect(),
        low: intervals.iter().map(|s| s.interval_low).collect(),
        high: intervals.iter().map(|s| s.interval_high).collect(),
    })
}

fn mcmc_estimate(
    data: &SurvivalDataset,
    prior: &PriorSpec,
    options: &ReplicationOptions,
    seed: u64,
    replicate: usize,
) -> Result<Estimate, String> {
    let config = McmcConfig {
        n_iterations: options.mcmc_iterations,
        burn_in: options.mcmc_burn_in,
        seed,
        stream: replicate as u64,
        proposal: options.mcmc_proposal,
    };
    let chain = sample_posterior_with(data, prior, &config).map_err(|e| e.to_string())?;
    let s = chain.summaries(data.covariate_names(), options.level);
    Ok(Estimate {
        point: s.iter().map(|s| s.mean).collect(),
        low: s.iter().map(|s| s.interval_low).collect(),
        high: s.iter().map(|s| s.interval_high).collect(),
    })
}

struct ReplicateResult {
    per_method: Vec<Result<Estimate, String>>,
    seconds: Vec<f64>,
    vb_trace: Option<VbTrace>,
}

/// Fits every requested method on each replicate (in parallel) and aggregates
/// in replicate order. Fails if more than 1% of a method's fits fail.
pub fn run_replication(
    scenario: &SimulationScenario,
    prior: &PriorSpec,
    methods: &[Method],
    options: &ReplicationOptions,
) -> Result<ReplicationOutcome, SimulationError> {
    scenario.validate()?;
    prior.check_dimension(3)?;
    let results: Vec<ReplicateResult> = (0..scenario.n_replicates)
        .into_par_iter()
        .map(|rep| {
            let data = generate_dataset(scenario, rep);
            let mut per_method = Vec::with_capacity(methods.len());
            let mut seconds = Vec::with_capacity(methods.len());
            let mut vb_trace = None;
            for method in methods {
                let start = Instant::now();
                let result = match method {
                    Method::Vb => vb_estimate(&data, prior, options, rep).map(|(e, t)| {
                        vb_trace = Some(t);
                        e
                    }),
                    Method::Mle => mle_estimate(&data, options.level),
                    Method::Mcmc => mcmc_estimate(&data, prior, options, scenario.seed, rep),
                };
                seconds.push(start.elapsed().as_secs_f64());
                per_method.push(result);
            }
            ReplicateResult {
                per_method,
                seconds,
                vb_trace,
            }
        })
        .collect();

    let truth = scenario.truth();
    let mut reports = Vec::with_capacity(methods.len());
    for (m, method) in methods.iter().enumerate() {
        let ok: Vec<&Estimate> = results
            .iter()
            .filter_map(|r| r.per_method[m].as_ref().ok())
            .collect();
        let failed = scenario.n_replicates - ok.len();
        if failed * 100 > scenario.n_replicates || ok.is_empty() {
            return Err(SimulationError::TooManyFailures {
                method: method.label().into(),
                failed,
                total: scenario.n_replicates,
            });
        }
        let parameters = (0..4)
            .map(|k| {
                let point: Vec<f64> = ok.iter().map(|e| e.point[k]).collect();
                let low: Vec<f64> = ok.iter().map(|e| e.low[k]).collect();
                let high: Vec<f64> = ok.iter().map(|e| e.high[k]).collect();
                aggregate(PARAMETER_NAMES[k], truth[k], &point, &low, &high)
            })
            .collect();
        reports.push(ReplicationReport {
            method: *method,
            parameters,
            n_success: ok.len(),
            n_failed: failed,
            wall_time: results.iter().map(|r| r.seconds[m]).sum(),
        });
    }
    let vb_traces = results.into_iter().filter_map(|r| r.vb_trace).collect();
    Ok(ReplicationOutcome { reports, vb_traces })
}

/// One row per (method, parameter) after a `#`-prefixed metadata block.
/// Wall time is left out so that repeated runs give identical files.
pub fn write_report_csv<W: Write>(
    mut out: W,
    scenario: &SimulationScenario,
    prior: &PriorSpec,
    options: &ReplicationOptions,
    reports: &[ReplicationReport],
) -> Result<(), SimulationError> {
    let join = |v: &DVector<f64>| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
    writeln!(out, "# n={}", scenario.n)?;
    writeln!(out, "# censor_u={}", scenario.censor_bound)?;
    writeln!(out, "# replicates={}", scenario.n_replicates)?;
    writeln!(out, "# seed={}", scenario.seed)?;
    writeln!(out, "# true_coefficients={}", join(&scenario.true_coefficients))?;
    writeln!(out, "# true_scale={}", scenario.true_scale)?;
    writeln!(out, "# prior_mean={}", join(&prior.coef_mean))?;
    writeln!(out, "# prior_precision={}", prior.coef_precision)?;
    writeln!(out, "# prior_shape={}", prior.scale_shape)?;
    writeln!(out, "# prior_rate={}", prior.scale_rate)?;
    writeln!(out, "# elbo_tol={}", options.fit.elbo_tolerance)?;
    writeln!(out, "# max_iter={}", options.fit.max_iterations)?;
    writeln!(out, "# level={}", options.level)?;
    writeln!(out, "method,parameter,truth,bias,sd,mse,coverage,avg_length,n_success,n_failed")?;
    for report in reports {
        for p in &report.parameters {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                report.method.label(),
                p.name,
                p.truth,
                p.bias,
                p.sample_sd,
                p.mse,
                p.coverage_percent,
                p.avg_interval_length,
                report.n_success,
                report.n_failed
            )?;
        }
    }
    Ok(())
}
