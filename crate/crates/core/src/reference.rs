//! Reference estimators: maximum likelihood by Newton's method and a
//! random-walk Metropolis sampler of the exact posterior.

use nalgebra::{DMatrix, DVector};

use crate::error::ReferenceError;
use crate::model::{
    log_likelihood_derivatives, log_posterior, ModelParams, PriorSpec, SurvivalDataset,
};
use crate::numerics::normal_quantile;
use crate::posterior::{summarize_samples, IntervalKind, ParameterSummary};
use crate::rng::{standard_normal, stream, uniform, StreamRole};

const NEWTON_MAX_ITER: usize = 200;
const GRADIENT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct MleResult {
    pub coefficients: DVector<f64>,
    pub scale: f64,
    /// Inverse observed information on (β, log b).
    pub covariance: DMatrix<f64>,
    pub log_likelihood_at_max: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
}

impl MleResult {
    pub fn coefficient_se(&self) -> Vec<f64> {
        let p = self.coefficients.len();
        (0..p).map(|j| self.covariance[(j, j)].sqrt()).collect()
    }

    pub fn log_scale_se(&self) -> f64 {
        let p = self.coefficients.len();
        self.covariance[(p, p)].sqrt()
    }

    /// Delta method: SE(b) = b · SE(log b).
    pub fn scale_se(&self) -> f64 {
        self.scale * self.log_scale_se()
    }

    /// Wald intervals; the scale interval is formed on log b and exponentiated.
    pub fn wald_intervals(
        &self,
        names: &[String],
        level: f64,
    ) -> Result<Vec<ParameterSummary>, ReferenceError> {
        let z = normal_quantile(0.5 * (1.0 + level)).map_err(crate::error::ModelError::from)?;
        let mut out: Vec<ParameterSummary> = self
            .coefficients
            .iter()
            .zip(self.coefficient_se())
            .enumerate()
            .map(|(j, (&est, se))| ParameterSummary {
                name: names.get(j).cloned().unwrap_or_else(|| format!("beta{j}")),
                mean: est,
                sd: Some(se),
                interval_low: est - z * se,
                interval_high: est + z * se,
                interval_kind: IntervalKind::Wald,
            })
            .collect();
        let log_b = self.scale.ln();
        let se = self.log_scale_se();
        out.push(ParameterSummary {
            name: "scale".into(),
            mean: self.scale,
            sd: Some(self.scale_se()),
            interval_low: (log_b - z * se).exp(),
            interval_high: (log_b + z * se).exp(),
            interval_kind: IntervalKind::Wald,
        });
        Ok(out)
    }
}

fn least_squares_start(data: &SurvivalDataset) -> Result<(DVector<f64>, f64), ReferenceError> {
    let x = data.design();
    let y = data.log_times();
    let xtx = x.transpose() * x;
    let beta = xtx
        .cholesky()
        .ok_or(ReferenceError::SingularHessian)?
        .solve(&(x.transpose() * y));
    let resid = data.residuals(&beta);
    let dof = (data.n() - data.p()).max(1) as f64;
    let sd = (resid.norm_squared() / dof).sqrt().max(1e-3);
    // logistic SD is π/√3 times the scale
    let log_scale = (sd * 3f64.sqrt() / std::f64::consts::PI).ln();
    Ok((beta, log_scale))
}

/// Maximizes the log-likelihood over (β, log b) by damped Newton steps.
pub fn fit_mle(data: &SurvivalDataset) -> Result<MleResult, ReferenceError> {
    let n = data.n();
    let p = data.p();
    if n <= p {
        return Err(ReferenceError::TooFewObservations { n, p });
    }
    let (mut beta, mut log_b) = least_squares_start(data)?;
    let mut current = log_likelihood_derivatives(data, &beta, log_b)?;
    for iteration in 0..=NEWTON_MAX_ITER {
        let gnorm = current.gradient.norm();
        if gnorm <= GRADIENT_TOLERANCE {
            let info = -&current.hessian;
            let covariance = info
                .cholesky()
                .ok_or(ReferenceError::SingularHessian)?
                .inverse();
            let covariance = (&covariance + covariance.transpose()) * 0.5;
            return Ok(MleResult {
                coefficients: beta,
                scale: log_b.exp(),
                covariance,
                log_likelihood_at_max: current.value,
                iterations: iteration,
                gradient_norm: gnorm,
            });
        }
        if iteration == NEWTON_MAX_ITER {
            break;
        }
        // Newton direction on the negative Hessian, with Levenberg damping when
        // it is not positive definite.
        let info = -&current.hessian;
        let mut damping = 0.0;
        let step = loop {
            let shifted = &info + DMatrix::identity(p + 1, p + 1) * damping;
            if let Some(ch) = shifted.cholesky() {
                break ch.solve(&current.gradient);
            }
            damping = if damping == 0.0 { 1e-6 * info.amax().max(1.0) } else { damping * 10.0 };
            if damping > 1e12 {
                return Err(ReferenceError::SingularHessian);
            }
        };
        // near the optimum the objective is flat to a few ulps; allow that much slack
        let slack = 64.0 * f64::EPSILON * (1.0 + current.value.abs());
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand_beta = &beta + step.rows(0, p) * t;
            let cand_log_b = log_b + step[p] * t;
            if let Ok(cand) = log_likelihood_derivatives(data, &cand_beta, cand_log_b) {
                if cand.value >= current.value - slack {
                    accepted = Some((cand_beta, cand_log_b, cand));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((b, lb, d)) => {
                beta = b;
                log_b = lb;
                current = d;
            }
            // no ascent possible along the step: already at the optimum in floating point
            None => {
                let info = -&current.hessian;
                let covariance = info
                    .cholesky()
                    .ok_or(ReferenceError::SingularHessian)?
                    .inverse();
                let gradient_norm = current.gradient.norm();
                if gradient_norm > 1e-6 {
                    return Err(ReferenceError::NoConvergence(iteration));
                }
                return Ok(MleResult {
                    coefficients: beta,
                    scale: log_b.exp(),
                    covariance: (&covariance + covariance.transpose()) * 0.5,
                    log_likelihood_at_max: current.value,
                    iterations: iteration,
                    gradient_norm,
                });
            }
        }
    }
    Err(ReferenceError::NoConvergence(NEWTON_MAX_ITER))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProposalKind {
    /// independent Gaussian increments per coordinate
    #[default]
    Diagonal,
    /// correlated Gaussian increments shaped by the burn-in covariance
    FullCovariance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcConfig {
    pub n_iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Selects an independent random stream for the same seed.
    pub stream: u64,
    pub proposal: ProposalKind,
}

impl McmcConfig {
    pub fn new(n_iterations: usize, burn_in: usize, seed: u64) -> Self {
        Self {
            n_iterations,
            burn_in,
            seed,
            stream: 0,
            proposal: ProposalKind::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcChain {
    /// One row per retained draw: β then b.
    pub draws: DMatrix<f64>,
    pub acceptance_rate: f64,
    pub seed: u64,
    pub warning: Option<String>,
}

impl McmcChain {
    pub fn len(&self) -> usize {
        self.draws.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.nrows() == 0
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.column(j).iter().copied().collect()
    }

    pub fn scale_draws(&self) -> Vec<f64> {
        self.column(self.draws.ncols() - 1)
    }

    pub fn means(&self) -> Vec<f64> {
        let n = self.len() as f64;
        (0..self.draws.ncols())
            .map(|j| self.draws.column(j).sum() / n)
            .collect()
    }

    /// ETIs for β and an HDI for b.
    pub fn summaries(&self, names: &[String], level: f64) -> Vec<ParameterSummary> {
        let p = self.draws.ncols() - 1;
        let mut out: Vec<ParameterSummary> = (0..p)
            .map(|j| {
                let name = names.get(j).cloned().unwrap_or_else(|| format!("beta{j}"));
                summarize_samples(&name, &self.column(j), level, IntervalKind::Eti)
            })
            .collect();
        out.push(summarize_samples("scale", &self.scale_draws(), level, IntervalKind::Hdi));
        out
    }
}

/// log p(β, b | D) in θ = (β, log b), including the Jacobian log b.
fn log_target(data: &SurvivalDataset, prior: &PriorSpec, theta: &DVector<f64>) -> f64 {
    let p = data.p();
    let log_b = theta[p];
    let params = ModelParams {
        coefficients: theta.rows(0, p).into_owned(),
        scale: log_b.exp(),
    };
    match log_posterior(data, &params, prior) {
        Ok(v) => v + log_b,
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Starting point and proposal shape: the MLE and its covariance when
/// available, otherwise the prior.
fn starting_point(data: &SurvivalDataset, prior: &PriorSpec) -> (DVector<f64>, DMatrix<f64>) {
    let p = data.p();
    if let Ok(mle) = fit_mle(data) {
        let mut theta = DVector::zeros(p + 1);
        theta.rows_mut(0, p).copy_from(&mle.coefficients);
        theta[p] = mle.scale.ln();
        return (theta, mle.covariance);
    }
    let mut theta = DVector::zeros(p + 1);
    theta.rows_mut(0, p).copy_from(&prior.coef_mean);
    let a0 = prior.scale_shape;
    theta[p] = (prior.scale_rate / a0).ln();
    let mut cov = DMatrix::identity(p + 1, p + 1) / prior.coef_precision;
    cov[(p, p)] = 1.0 / a0;
    (theta, cov)
}

fn proposal_factor(cov: &DMatrix<f64>, kind: ProposalKind) -> DMatrix<f64> {
    let d = cov.nrows();
    let diagonal = || DMatrix::from_diagonal(&cov.diagonal().map(|v| v.max(1e-12).sqrt()));
    match kind {
        ProposalKind::Diagonal => diagonal(),
        ProposalKind::FullCovariance => {
            let jitter = DMatrix::identity(d, d) * (1e-10 * cov.diagonal().amax().max(1e-12));
            (cov + jitter).cholesky().map(|c| c.l()).unwrap_or_else(diagonal)
        }
    }
}

const ADAPT_BATCH: usize = 50;
const TARGET_ACCEPTANCE: f64 = 0.3;

/// Random-walk Metropolis on (β, log b). The proposal scale is tuned in
/// batches during burn-in toward 20-40% acceptance, the proposal shape is
/// re-estimated from burn-in draws halfway through, and both are frozen for
/// the retained draws.
pub fn sample_posterior_with(
    data: &SurvivalDataset,
    prior: &PriorSpec,
    config: &McmcConfig,
) -> Result<McmcChain, ReferenceError> {
    if config.n_iterations <= config.burn_in {
        return Err(ReferenceError::InvalidSampler(format!(
            "n_iterations ({}) must exceed burn_in ({})",
            config.n_iterations, config.burn_in
        )));
    }
    prior.check_dimension(data.p())?;
    let d = data.p() + 1;
    let mut rng = stream(config.seed, config.stream, StreamRole::Sampler);
    let (mut theta, init_cov) = starting_point(data, prior);
    let mut factor = proposal_factor(&init_cov, config.proposal);
    let mut lambda = 2.38 / (d as f64).sqrt();
    let mut current = log_target(data, prior, &theta);
    if !current.is_finite() {
        return Err(ReferenceError::InvalidSampler(
            "log posterior is not finite at the starting point".into(),
        ));
    }

    let kept = config.n_iterations - config.burn_in;
    let mut draws = DMatrix::zeros(kept, d);
    let mut burn_trace: Vec<DVector<f64>> = Vec::with_capacity(config.burn_in);
    let mut batch_accepts = 0usize;
    let mut kept_accepts = 0usize;
    let reshape_at = config.burn_in / 2;

    for it in 0..config.n_iterations {
        let noise = DVector::from_fn(d, |_, _| standard_normal(&mut rng));
        let proposal = &theta + &factor * noise * lambda;
        let cand = log_target(data, prior, &proposal);
        let log_u = uniform(&mut rng).ln();
        let accept = cand.is_finite() && log_u < cand - current;
        if accept {
            theta = proposal;
            current = cand;
        }
        if it < config.burn_in {
            batch_accepts += accept as usize;
            burn_trace.push(theta.clone());
            if (it + 1) % ADAPT_BATCH == 0 {
                let rate = batch_accepts as f64 / ADAPT_BATCH as f64;
                if !(0.2..=0.4).contains(&rate) {
                    lambda *= ((rate - TARGET_ACCEPTANCE) * 2.0).exp();
                }
                batch_accepts = 0;
            }
            if it + 1 == reshape_at && reshape_at >= 4 * d {
                let window = &burn_trace[reshape_at / 2..];
                let m = window.len() as f64;
                let mean = window.iter().fold(DVector::zeros(d), |acc, v| acc + v) / m;
                let cov = window.iter().fold(DMatrix::zeros(d, d), |acc, v| {
                    let c = v - &mean;
                    acc + &c * c.transpose()
                }) / (m - 1.0);
                if cov.diagonal().iter().all(|&v| v > 0.0) {
                    factor = proposal_factor(&cov, config.proposal);
                    lambda = 2.38 / (d as f64).sqrt();
                }
            }
        } else {
            kept_accepts += accept as usize;
            let row = it - config.burn_in;
            for j in 0..d - 1 {
                draws[(row, j)] = theta[j];
            }
            draws[(row, d - 1)] = theta[d - 1].exp();
        }
    }
    let acceptance_rate = kept_accepts as f64 / kept as f64;
    let warning = (!(0.01..=0.99).contains(&acceptance_rate))
        .then(|| format!("acceptance rate {acceptance_rate:.4} outside (0.01, 0.99)"));
    Ok(McmcChain {
        draws,
        acceptance_rate,
        seed: config.seed,
        warning,
    })
}

pub fn sample_posterior(
    data: &SurvivalDataset,
    prior: &PriorSpec,
    n_iterations: usize,
    burn_in: usize,
    seed: u64,
) -> Result<McmcChain, ReferenceError> {
    sample_posterior_with(data, prior, &McmcConfig::new(n_iterations, burn_in, seed))
}
