//! Coordinate ascent updates for q(β) q(b) = N(μ, Σ) · Inverse-Gamma(α, ω).

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::FitError;
use crate::model::{PriorSpec, SurvivalDataset};
use crate::numerics::{digamma, inverse_gamma_moments, InverseGammaMoments, InverseGammaParams};
use crate::piecewise::{segment_coefficients, PiecewiseCoefficients};

/// How the standardized residuals that select the piecewise segments are
/// scaled on the first iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialResidualScale {
    /// α₀/ω₀, the prior mean of 1/b.
    #[default]
    PriorMean,
    /// α/ω with α = α₀ + r and ω = ω₀, i.e. the initialized state.
    InitializedState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub elbo_tolerance: f64,
    pub max_iterations: usize,
    pub initial_residual_scale: InitialResidualScale,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            elbo_tolerance: 0.01,
            max_iterations: 100,
            initial_residual_scale: InitialResidualScale::PriorMean,
        }
    }
}

impl FitConfig {
    pub fn new(elbo_tolerance: f64, max_iterations: usize) -> Result<Self, FitError> {
        let config = Self {
            elbo_tolerance,
            max_iterations,
            ..Self::default()
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), FitError> {
        if !(self.elbo_tolerance > 0.0) || !self.elbo_tolerance.is_finite() {
            return Err(FitError::InvalidConfig(format!(
                "ELBO tolerance must be positive, got {}",
                self.elbo_tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(FitError::InvalidConfig(
                "max_iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Dataset had no observations.
    NoData,
    ElboTolerance,
    /// Segment assignment and parameters repeat an earlier iteration.
    Cycle { period: usize },
    MaxIterations,
}

/// Diagnostics recorded after each iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub elbo: f64,
    /// Segment assignment equals the one used in the previous iteration.
    pub segments_unchanged: bool,
    pub scale_shape: f64,
    pub scale_rate: f64,
    /// Smallest eigenvalue of Σ.
    pub min_cov_eigenvalue: f64,
    /// max |Σ − Σᵀ|
    pub cov_asymmetry: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub coef_mean: DVector<f64>,
    pub coef_cov: DMatrix<f64>,
    pub scale_shape: f64,
    pub scale_rate: f64,
    pub elbo_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: Option<StopReason>,
    pub history: Vec<IterationRecord>,
}

impl VariationalState {
    pub fn scale_params(&self) -> InverseGammaParams {
        InverseGammaParams::new(self.scale_shape, self.scale_rate)
            .expect("state keeps α > 0 and ω > 0")
    }

    pub fn scale_moments(&self) -> InverseGammaMoments {
        inverse_gamma_moments(&self.scale_params())
    }

    /// E(b) = ω/(α − 1), infinite for α ≤ 1.
    pub fn scale_mean(&self) -> f64 {
        if self.scale_shape > 1.0 {
            self.scale_rate / (self.scale_shape - 1.0)
        } else {
            f64::INFINITY
        }
    }

    pub fn final_elbo(&self) -> Option<f64> {
        self.elbo_trace.last().copied()
    }
}

/// μ = μ₀, ω = ω₀, α = α₀ + r. Σ holds the prior covariance I/v₀ until the
/// first update replaces it.
pub fn initialize(data: &SurvivalDataset, prior: &PriorSpec) -> Result<VariationalState, FitError> {
    prior.check_dimension(data.p())?;
    let p = data.p();
    Ok(VariationalState {
        coef_mean: prior.coef_mean.clone(),
        coef_cov: DMatrix::identity(p, p) / prior.coef_precision,
        scale_shape: prior.scale_shape + data.events() as f64,
        scale_rate: prior.scale_rate,
        elbo_trace: Vec::new(),
        iterations: 0,
        converged: false,
        stop_reason: None,
        history: Vec::new(),
    })
}

/// ẑᵢ = (yᵢ − Xᵢᵀμ) · `inverse_scale`.
pub fn plug_in_residuals(
    data: &SurvivalDataset,
    coef_mean: &DVector<f64>,
    inverse_scale: f64,
) -> Vec<f64> {
    data.residuals(coef_mean)
        .iter()
        .map(|e| e * inverse_scale)
        .collect()
}

fn moments(state: &VariationalState) -> (f64, f64) {
    let a = state.scale_shape;
    let w = state.scale_rate;
    (a / w, (a + a * a) / (w * w))
}

/// Σ = [v₀ I + 2 E(1/b²) Σᵢ (1 + δᵢ) ζᵢ Xᵢ Xᵢᵀ]⁻¹
pub fn update_sigma(
    data: &SurvivalDataset,
    prior: &PriorSpec,
    state: &VariationalState,
    coeffs: &PiecewiseCoefficients,
) -> Result<DMatrix<f64>, FitError> {
    let iteration = state.iterations + 1;
    let p = data.p();
    let (_, e_inv_sq) = moments(state);
    let x = data.design();
    let deltas = data.deltas();
    let mut precision = DMatrix::identity(p, p) * prior.coef_precision;
    for i in 0..data.n() {
        let w = 2.0 * e_inv_sq * (1.0 + deltas[i]) * coeffs.zeta[i];
        if w == 0.0 {
            continue;
        }
        let row = x.row(i);
        for j in 0..p {
            for k in 0..=j {
                precision[(j, k)] += w * row[j] * row[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            precision[(k, j)] = precision[(j, k)];
        }
    }
    let chol = precision
        .cholesky()
        .ok_or(FitError::SingularPrecision { iteration })?;
    let sigma = chol.inverse();
    Ok((&sigma + sigma.transpose()) * 0.5)
}

/// μ = Σ [v₀ μ₀ + Σᵢ (E(1/b)(−δᵢ + (1 + δᵢ)ρᵢ) + 2 E(1/b²)(1 + δᵢ) yᵢ ζᵢ) Xᵢ]
pub fn update_mu(
    data: &SurvivalDataset,
    prior: &PriorSpec,
    state: &VariationalState,
    coeffs: &PiecewiseCoefficients,
    sigma_new: &DMatrix<f64>,
) -> Result<DVector<f64>, FitError> {
    let (e_inv, e_inv_sq) = moments(state);
    let x = data.design();
    let y = data.log_times();
    let deltas = data.deltas();
    let mut linear = &prior.coef_mean * prior.coef_precision;
    for i in 0..data.n() {
        let d = deltas[i];
        let w = e_inv * (-d + (1.0 + d) * coeffs.rho[i])
            + 2.0 * e_inv_sq * (1.0 + d) * y[i] * coeffs.zeta[i];
        linear += x.row(i).transpose() * w;
    }
    let mu = sigma_new * linear;
    if mu.iter().any(|v| !v.is_finite()) {
        return Err(FitError::SingularPrecision {
            iteration: state.iterations + 1,
        });
    }
    Ok(mu)
}

fn linear_residual_sum(
    data: &SurvivalDataset,
    coeffs: &PiecewiseCoefficients,
    mu: &DVector<f64>,
) -> f64 {
    data.residuals(mu)
        .iter()
        .zip(data.deltas().iter())
        .zip(coeffs.phi.iter())
        .map(|((e, d), phi)| (d - (1.0 + d) * phi) * e)
        .sum()
}

/// ω = ω₀ − Σᵢ (δᵢ − (1 + δᵢ) φᵢ)(yᵢ − Xᵢᵀμ); fails unless positive.
pub fn update_omega(
    data: &SurvivalDataset,
    prior: &PriorSpec,
    state: &VariationalState,
    coeffs: &PiecewiseCoefficients,
    mu_new: &DVector<f64>,
) -> Result<f64, FitError> {
    let omega = prior.scale_rate - linear_residual_sum(data, coeffs, mu_new);
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(FitError::NonPositiveOmega {
            iteration: state.iterations + 1,
            omega,
        });
    }
    Ok(omega)
}

/// ELBO with the additive constants (p/2 and log Γ(α)) dropped.
pub fn elbo(
    data: &SurvivalDataset,
    prior: &PriorSpec,
    state: &VariationalState,
    coeffs: &PiecewiseCoefficients,
) -> Result<f64, FitError> {
    let iteration = state.iterations.max(1);
    let a = state.scale_shape;
    let w = state.scale_rate;
    let e_inv = a / w;
    let e_log = w.ln() - digamma(a)?;
    let r = data.events() as f64;
    let likelihood = -r * e_log + e_inv * linear_residual_sum(data, coeffs, &state.coef_mean);

    let chol = state
        .coef_cov
        .clone()
        .cholesky()
        .ok_or(FitError::SingularPrecision { iteration })?;
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let diff_mean = &state.coef_mean - &prior.coef_mean;
    let diff_beta = -0.5 * prior.coef_precision * (state.coef_cov.trace() + diff_mean.norm_squared())
        + 0.5 * log_det;
    let diff_b = (a - prior.scale_shape) * e_log + (w - prior.scale_rate) * e_inv - a * w.ln();

    let value = likelihood + diff_beta + diff_b;
    if !value.is_finite() {
        return Err(FitError::NonFiniteElbo { iteration });
    }
    Ok(value)
}

const CYCLE_LAGS: usize = 3;
const CYCLE_TOLERANCE: f64 = 1e-10;

struct Snapshot {
    coeffs: PiecewiseCoefficients,
    mu: DVector<f64>,
    omega: f64,
}

impl Snapshot {
    fn matches(&self, other: &Snapshot) -> bool {
        self.coeffs.same_segments(&other.coeffs)
            && (self.omega - other.omega).abs() <= CYCLE_TOLERANCE
            && self
                .mu
                .iter()
                .zip(other.mu.iter())
                .all(|(a, b)| (a - b).abs() <= CYCLE_TOLERANCE)
    }
}

fn record(state: &VariationalState, elbo: f64, segments_unchanged: bool) -> IterationRecord {
    let eig = SymmetricEigen::new(state.coef_cov.clone());
    let min_cov_eigenvalue = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let cov_asymmetry = (&state.coef_cov - state.coef_cov.transpose()).amax();
    IterationRecord {
        iteration: state.iterations,
        elbo,
        segments_unchanged,
        scale_shape: state.scale_shape,
        scale_rate: state.scale_rate,
        min_cov_eigenvalue,
        cov_asymmetry,
    }
}

/// Runs coordinate ascent until the ELBO changes by at most the tolerance, a
/// cycle is detected, or the iteration cap is reached.
pub fn fit(
    data: &SurvivalDataset,
    prior: &PriorSpec,
    config: &FitConfig,
) -> Result<VariationalState, FitError> {
    config.validate()?;
    let mut state = initialize(data, prior)?;
    if data.is_empty() {
        state.converged = true;
        state.stop_reason = Some(StopReason::NoData);
        return Ok(state);
    }

    let mut recent: Vec<Snapshot> = Vec::with_capacity(CYCLE_LAGS + 1);
    let mut previous_coeffs: Option<PiecewiseCoefficients> = None;
    while state.iterations < config.max_iterations {
        let inverse_scale = match (state.iterations, config.initial_residual_scale) {
            (0, InitialResidualScale::PriorMean) => prior.scale_shape / prior.scale_rate,
            _ => state.scale_shape / state.scale_rate,
        };
        let z_hat = plug_in_residuals(data, &state.coef_mean, inverse_scale);
        let coeffs = segment_coefficients(&z_hat);

        let sigma = update_sigma(data, prior, &state, &coeffs)?;
        let mu = update_mu(data, prior, &state, &coeffs, &sigma)?;
        let omega = update_omega(data, prior, &state, &coeffs, &mu)?;
        state.coef_cov = sigma;
        state.coef_mean = mu;
        state.scale_rate = omega;
        state.iterations += 1;

        let value = elbo(data, prior, &state, &coeffs)?;
        let unchanged = previous_coeffs
            .as_ref()
            .is_some_and(|prev| prev.same_segments(&coeffs));
        state.history.push(record(&state, value, unchanged));
        state.elbo_trace.push(value);

        if state.elbo_trace.len() >= 2 {
            let prev = state.elbo_trace[state.elbo_trace.len() - 2];
            if (value - prev).abs() <= config.elbo_tolerance {
                state.converged = true;
                state.stop_reason = Some(StopReason::ElboTolerance);
                break;
            }
        }

        let snapshot = Snapshot {
            coeffs: coeffs.clone(),
            mu: state.coef_mean.clone(),
            omega: state.scale_rate,
        };
        if let Some(pos) = recent.iter().rev().position(|s| s.matches(&snapshot)) {
            state.converged = true;
            state.stop_reason = Some(StopReason::Cycle { period: pos + 1 });
            break;
        }
        recent.push(snapshot);
        if recent.len() > CYCLE_LAGS {
            recent.remove(0);
        }
        previous_coeffs = Some(coeffs);
    }
    if state.stop_reason.is_none() {
        state.stop_reason = Some(StopReason::MaxIterations);
    }
    Ok(state)
}
