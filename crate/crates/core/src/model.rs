//! Log-logistic accelerated failure time model: data, priors and likelihood.
//!
//! log Tᵢ = Xᵢᵀβ + b·zᵢ with zᵢ standard logistic. With right censoring and
//! zᵢ = (yᵢ − Xᵢᵀβ)/b the log-likelihood is
//!
//! ```text
//! l(β, b) = −r log b + Σᵢ [ δᵢ zᵢ − (1 + δᵢ) log(1 + e^{zᵢ}) ]
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::ModelError;
use crate::numerics::{log_gamma, sigmoid, softplus, InverseGammaParams};

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalObservation {
    /// tᵢ as observed; kept so that written files reproduce the input exactly
    pub time: f64,
    /// yᵢ = log tᵢ
    pub log_time: f64,
    /// true for an observed event, false for right censoring
    pub event: bool,
    /// Xᵢ, first entry is the intercept 1
    pub covariates: Vec<f64>,
}

impl SurvivalObservation {
    pub fn new(log_time: f64, event: bool, covariates: Vec<f64>) -> Self {
        Self {
            time: log_time.exp(),
            log_time,
            event,
            covariates,
        }
    }

    /// Builds an observation from a raw time; the time must be positive.
    pub fn from_time(time: f64, event: bool, covariates: Vec<f64>) -> Result<Self, ModelError> {
        if !(time > 0.0) || !time.is_finite() {
            return Err(ModelError::NonPositiveTime { index: 0, time });
        }
        Ok(Self {
            time,
            log_time: time.ln(),
            event,
            covariates,
        })
    }

    pub fn delta(&self) -> f64 {
        if self.event {
            1.0
        } else {
            0.0
        }
    }
}

/// An immutable set of right-censored observations sharing dimension p.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    observations: Vec<SurvivalObservation>,
    covariate_names: Vec<String>,
    p: usize,
    events: usize,
    design: DMatrix<f64>,
    log_times: DVector<f64>,
    deltas: DVector<f64>,
}

impl SurvivalDataset {
    pub fn new(p: usize, observations: Vec<SurvivalObservation>) -> Result<Self, ModelError> {
        let names = default_covariate_names(p);
        Self::with_names(names, observations)
    }

    /// `covariate_names[0]` labels the intercept.
    pub fn with_names(
        covariate_names: Vec<String>,
        observations: Vec<SurvivalObservation>,
    ) -> Result<Self, ModelError> {
        let p = covariate_names.len();
        if p < 2 {
            return Err(ModelError::TooFewCovariates(p));
        }
        for (index, obs) in observations.iter().enumerate() {
            if obs.covariates.len() != p {
                return Err(ModelError::DimensionMismatch {
                    index,
                    expected: p,
                    actual: obs.covariates.len(),
                });
            }
            if obs.covariates[0] != 1.0 {
                return Err(ModelError::MissingIntercept {
                    index,
                    value: obs.covariates[0],
                });
            }
            if !obs.log_time.is_finite() || obs.covariates.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteObservation { index });
            }
        }
        let n = observations.len();
        let design = DMatrix::from_fn(n, p, |i, j| observations[i].covariates[j]);
        let log_times = DVector::from_iterator(n, observations.iter().map(|o| o.log_time));
        let deltas = DVector::from_iterator(n, observations.iter().map(|o| o.delta()));
        let events = observations.iter().filter(|o| o.event).count();
        Ok(Self {
            observations,
            covariate_names,
            p,
            events,
            design,
            log_times,
            deltas,
        })
    }

    pub fn empty(p: usize) -> Result<Self, ModelError> {
        Self::new(p, Vec::new())
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// r = Σ δᵢ
    pub fn events(&self) -> usize {
        self.events
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[SurvivalObservation] {
        &self.observations
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// n × p design matrix with the intercept in column 0.
    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn log_times(&self) -> &DVector<f64> {
        &self.log_times
    }

    /// Event indicators as 0.0 / 1.0.
    pub fn deltas(&self) -> &DVector<f64> {
        &self.deltas
    }

    /// Residuals yᵢ − Xᵢᵀβ.
    pub fn residuals(&self, coefficients: &DVector<f64>) -> DVector<f64> {
        &self.log_times - &self.design * coefficients
    }

    pub fn censoring_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        1.0 - self.events as f64 / self.n() as f64
    }
}

pub fn default_covariate_names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("beta{j}")).collect()
}

/// β ~ N_p(μ₀, v₀⁻¹ I), b ~ Inverse-Gamma(α₀, ω₀).
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub coef_mean: DVector<f64>,
    pub coef_precision: f64,
    pub scale_shape: f64,
    pub scale_rate: f64,
}

impl PriorSpec {
    pub fn new(
        coef_mean: DVector<f64>,
        coef_precision: f64,
        scale_shape: f64,
        scale_rate: f64,
    ) -> Result<Self, ModelError> {
        if !(coef_precision > 0.0) || !coef_precision.is_finite() {
            return Err(ModelError::InvalidPrior(format!(
                "coefficient precision must be positive, got {coef_precision}"
            )));
        }
        if !(scale_shape > 0.0) || !scale_shape.is_finite() {
            return Err(ModelError::InvalidPrior(format!(
                "scale shape must be positive, got {scale_shape}"
            )));
        }
        if !(scale_rate > 0.0) || !scale_rate.is_finite() {
            return Err(ModelError::InvalidPrior(format!(
                "scale rate must be positive, got {scale_rate}"
            )));
        }
        if coef_mean.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidPrior(
                "coefficient mean must be finite".into(),
            ));
        }
        Ok(Self {
            coef_mean,
            coef_precision,
            scale_shape,
            scale_rate,
        })
    }

    /// μ₀ = 0, v₀ = 0.1, α₀ = 11, ω₀ = 10 in dimension p.
    pub fn weak(p: usize) -> Self {
        Self::new(DVector::zeros(p), 0.1, 11.0, 10.0).expect("valid constants")
    }

    /// μ₀ = (0.3, 0.1, 1.0), v₀ = 0.15, α₀ = 11, ω₀ = 8.
    pub fn strong() -> Self {
        Self::new(DVector::from_vec(vec![0.3, 0.1, 1.0]), 0.15, 11.0, 8.0)
            .expect("valid constants")
    }

    /// Priors for the rhDNase exacerbation analysis: μ₀ = (4.4, 0.25, 0.04),
    /// v₀ = 1, α₀ = 501, ω₀ = 500.
    pub fn rhdnase() -> Self {
        Self::new(DVector::from_vec(vec![4.4, 0.25, 0.04]), 1.0, 501.0, 500.0)
            .expect("valid constants")
    }

    pub fn p(&self) -> usize {
        self.coef_mean.len()
    }

    pub fn scale_prior(&self) -> InverseGammaParams {
        InverseGammaParams::new(self.scale_shape, self.scale_rate).expect("validated at construction")
    }

    pub fn check_dimension(&self, p: usize) -> Result<(), ModelError> {
        if self.p() != p {
            return Err(ModelError::ParameterDimension {
                expected: p,
                actual: self.p(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub coefficients: DVector<f64>,
    pub scale: f64,
}

impl ModelParams {
    pub fn new(coefficients: DVector<f64>, scale: f64) -> Result<Self, ModelError> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(ModelError::NonPositiveScale(scale));
        }
        Ok(Self {
            coefficients,
            scale,
        })
    }
}

fn check_params(data: &SurvivalDataset, params: &ModelParams) -> Result<(), ModelError> {
    if params.coefficients.len() != data.p() {
        return Err(ModelError::ParameterDimension {
            expected: data.p(),
            actual: params.coefficients.len(),
        });
    }
    if !(params.scale > 0.0) {
        return Err(ModelError::NonPositiveScale(params.scale));
    }
    Ok(())
}

/// Exact log-likelihood of the log-logistic AFT model.
pub fn log_likelihood(data: &SurvivalDataset, params: &ModelParams) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    check_params(data, params)?;
    let b = params.scale;
    let residuals = data.residuals(&params.coefficients);
    let sum: f64 = residuals
        .iter()
        .zip(data.deltas().iter())
        .map(|(e, d)| {
            let z = e / b;
            d * z - (1.0 + d) * softplus(z)
        })
        .sum();
    let value = -(data.events() as f64) * b.ln() + sum;
    if !value.is_finite() {
        return Err(ModelError::NonFiniteLikelihood);
    }
    Ok(value)
}

/// Value, gradient and Hessian of the log-likelihood in (β, log b).
#[derive(Debug, Clone)]
pub struct LikelihoodDerivatives {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// Analytic derivatives of [`log_likelihood`] with respect to θ = (β, log b).
pub fn log_likelihood_derivatives(
    data: &SurvivalDataset,
    coefficients: &DVector<f64>,
    log_scale: f64,
) -> Result<LikelihoodDerivatives, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let p = data.p();
    if coefficients.len() != p {
        return Err(ModelError::ParameterDimension {
            expected: p,
            actual: coefficients.len(),
        });
    }
    let b = log_scale.exp();
    let residuals = data.residuals(coefficients);
    let x = data.design();
    let mut value = -(data.events() as f64) * log_scale;
    let mut gradient = DVector::zeros(p + 1);
    let mut hessian = DMatrix::zeros(p + 1, p + 1);
    gradient[p] = -(data.events() as f64);
    for i in 0..data.n() {
        let d = data.deltas()[i];
        let z = residuals[i] / b;
        let s = sigmoid(z);
        value += d * z - (1.0 + d) * softplus(z);
        // first and second derivative in z
        let g = d - (1.0 + d) * s;
        let h = -(1.0 + d) * s * (1.0 - s);
        let row = x.row(i);
        for j in 0..p {
            gradient[j] -= g * row[j] / b;
            for k in 0..=j {
                hessian[(j, k)] += h * row[j] * row[k] / (b * b);
            }
            hessian[(j, p)] += (h * z + g) * row[j] / b;
        }
        gradient[p] -= g * z;
        hessian[(p, p)] += h * z * z + g * z;
    }
    for j in 0..p {
        for k in 0..j {
            hessian[(k, j)] = hessian[(j, k)];
        }
        hessian[(p, j)] = hessian[(j, p)];
    }
    if !value.is_finite() || gradient.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteLikelihood);
    }
    Ok(LikelihoodDerivatives {
        value,
        gradient,
        hessian,
    })
}

/// Normal log-density of β under the prior, constants included.
pub fn coefficient_log_prior(prior: &PriorSpec, coefficients: &DVector<f64>) -> f64 {
    let p = coefficients.len() as f64;
    let v0 = prior.coef_precision;
    let diff = coefficients - &prior.coef_mean;
    0.5 * p * (v0 / (2.0 * std::f64::consts::PI)).ln() - 0.5 * v0 * diff.norm_squared()
}

/// Inverse-Gamma log-density of b under the prior, constants included.
pub fn scale_log_prior(prior: &PriorSpec, scale: f64) -> Result<f64, ModelError> {
    let a0 = prior.scale_shape;
    let w0 = prior.scale_rate;
    if !(scale > 0.0) {
        return Err(ModelError::NonPositiveScale(scale));
    }
    Ok(a0 * w0.ln() - log_gamma(a0)? - (a0 + 1.0) * scale.ln() - w0 / scale)
}

/// log p(D | β, b) + log p(β) + log p(b). An empty dataset contributes zero
/// likelihood, so the result is the log prior.
pub fn log_posterior(
    data: &SurvivalDataset,
    params: &ModelParams,
    prior: &PriorSpec,
) -> Result<f64, ModelError> {
    check_params(data, params)?;
    prior.check_dimension(data.p())?;
    let lik = if data.is_empty() {
        0.0
    } else {
        log_likelihood(data, params)?
    };
    let value = lik
        + coefficient_log_prior(prior, &params.coefficients)
        + scale_log_prior(prior, params.scale)?;
    if !value.is_finite() {
        return Err(ModelError::NonFiniteLikelihood);
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obs(y: f64, event: bool, x: &[f64]) -> SurvivalObservation {
        let mut covariates = vec![1.0];
        covariates.extend_from_slice(x);
        SurvivalObservation::new(y, event, covariates)
    }

    fn fixture() -> SurvivalDataset {
        SurvivalDataset::new(
            3,
            vec![
                obs(1.2, true, &[0.9, 1.0]),
                obs(0.4, false, &[1.1, 0.0]),
                obs(2.5, true, &[1.3, 1.0]),
                obs(-0.3, true, &[0.7, 0.0]),
                obs(1.9, false, &[1.0, 1.0]),
            ],
        )
        .unwrap()
    }

    fn fixture_params() -> ModelParams {
        ModelParams::new(DVector::from_vec(vec![0.5, 0.2, 0.8]), 0.8).unwrap()
    }

    #[test]
    fn single_observation_at_the_median() {
        let params = ModelParams::new(DVector::from_vec(vec![0.3, 0.0]), 1.0).unwrap();
        let event = SurvivalDataset::new(2, vec![obs(0.3, true, &[0.0])]).unwrap();
        assert!((log_likelihood(&event, &params).unwrap() + 2.0 * 2f64.ln()).abs() < 1e-14);
        let censored = SurvivalDataset::new(2, vec![obs(0.3, false, &[0.0])]).unwrap();
        assert!((log_likelihood(&censored, &params).unwrap() + 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn fixture_matches_density_survival_form() {
        // Independent route: δ log f₀(z) + (1−δ) log S₀(z) − δ log b, with f₀ and S₀
        // evaluated directly rather than through the softplus form.
        let data = fixture();
        let params = fixture_params();
        let b = params.scale;
        let mut oracle = 0.0;
        for o in data.observations() {
            let lp: f64 = o
                .covariates
                .iter()
                .zip(params.coefficients.iter())
                .map(|(x, c)| x * c)
                .sum();
            let z = (o.log_time - lp) / b;
            let ez = z.exp();
            if o.event {
                oracle += (ez / ((1.0 + ez) * (1.0 + ez))).ln() - b.ln();
            } else {
                oracle += (1.0 / (1.0 + ez)).ln();
            }
        }
        let value = log_likelihood(&data, &params).unwrap();
        assert!((value - oracle).abs() < 1e-12, "{value} vs {oracle}");
    }

    #[test]
    fn overflow_safe_for_extreme_residuals() {
        let data = SurvivalDataset::new(2, vec![obs(500.0, true, &[0.0]), obs(-500.0, false, &[0.0])])
            .unwrap();
        let params = ModelParams::new(DVector::from_vec(vec![0.0, 0.0]), 0.5).unwrap();
        let v = log_likelihood(&data, &params).unwrap();
        // event: z − 2(z + log(1+e^{-z})) ≈ −z; censored: −log(1+e^{z}) ≈ 0
        assert!((v - (-1000.0 + -0.5f64.ln())).abs() < 1e-9, "{v}");
    }

    #[test]
    fn log_posterior_prior_terms() {
        let prior = PriorSpec::new(DVector::from_vec(vec![0.1, -0.2]), 0.5, 1.0, 1.0).unwrap();
        let centered = coefficient_log_prior(&prior, &prior.coef_mean.clone());
        let expected = -(2.0 / 2.0) * (2.0 * std::f64::consts::PI / 0.5).ln();
        assert!((centered - expected).abs() < 1e-14);
        assert!((scale_log_prior(&prior, 1.0).unwrap() + 1.0).abs() < 1e-14);
    }

    #[test]
    fn log_posterior_is_sum_of_terms() {
        let data = fixture();
        let params = fixture_params();
        let prior = PriorSpec::weak(3);
        let lik = log_likelihood(&data, &params).unwrap();
        let beta_term = 1.5 * (0.1 / (2.0 * std::f64::consts::PI)).ln()
            - 0.05 * (0.25 + 0.04 + 0.64);
        let b = 0.8f64;
        let b_term = 11.0 * 10f64.ln() - log_gamma(11.0).unwrap() - 12.0 * b.ln() - 10.0 / b;
        let total = log_posterior(&data, &params, &prior).unwrap();
        assert!((total - (lik + beta_term + b_term)).abs() < 1e-12);
    }

    #[test]
    fn invariants_are_enforced() {
        assert!(matches!(
            SurvivalDataset::new(2, vec![SurvivalObservation::new(0.0, true, vec![2.0, 0.0])]),
            Err(ModelError::MissingIntercept { .. })
        ));
        assert!(matches!(
            SurvivalDataset::new(3, vec![obs(0.0, true, &[1.0])]),
            Err(ModelError::DimensionMismatch { .. })
        ));
        assert!(SurvivalDataset::new(1, vec![]).is_err());
        assert!(SurvivalObservation::from_time(0.0, true, vec![1.0, 0.0]).is_err());
        assert!(PriorSpec::new(DVector::zeros(2), 0.0, 1.0, 1.0).is_err());
        assert!(ModelParams::new(DVector::zeros(2), -1.0).is_err());
        let data = fixture();
        assert_eq!(data.events(), 3);
        assert_eq!(data.n(), 5);
        assert!(log_likelihood(&SurvivalDataset::empty(3).unwrap(), &fixture_params()).is_err());
    }

    fn random_dataset(seed: &[f64]) -> SurvivalDataset {
        let observations = seed
            .chunks(3)
            .map(|c| obs(c[0] * 3.0, c[1] > 0.0, &[c[1], c[2]]))
            .collect();
        SurvivalDataset::new(3, observations).unwrap()
    }

    proptest! {
        #[test]
        fn permutation_invariance(values in prop::collection::vec(-1.0f64..1.0, 30), shift in 0usize..10) {
            let data = random_dataset(&values);
            let mut rotated = data.observations().to_vec();
            rotated.rotate_left(shift);
            let permuted = SurvivalDataset::new(3, rotated).unwrap();
            let params = fixture_params();
            let a = log_likelihood(&data, &params).unwrap();
            let b = log_likelihood(&permuted, &params).unwrap();
            prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn event_term_is_log_density(y in -5.0f64..5.0, b0 in -2.0f64..2.0, b1 in -2.0f64..2.0, x in -1.0f64..1.0, scale in 0.1f64..3.0) {
            let data = SurvivalDataset::new(2, vec![obs(y, true, &[x])]).unwrap();
            let params = ModelParams::new(DVector::from_vec(vec![b0, b1]), scale).unwrap();
            let z = (y - b0 - b1 * x) / scale;
            let f0 = z.exp() / (1.0 + z.exp()).powi(2);
            let direct = f0.ln() - scale.ln();
            prop_assert!((log_likelihood(&data, &params).unwrap() - direct).abs() < 1e-10);
        }

        #[test]
        fn analytic_gradient_matches_finite_differences(values in prop::collection::vec(-1.0f64..1.0, 30),
                                                         b0 in -1.0f64..1.0, log_b in -0.7f64..0.5) {
            let data = random_dataset(&values);
            let beta = DVector::from_vec(vec![b0, 0.3, -0.4]);
            let d = log_likelihood_derivatives(&data, &beta, log_b).unwrap();
            let f = |beta: &DVector<f64>, lb: f64| {
                log_likelihood(&data, &ModelParams::new(beta.clone(), lb.exp()).unwrap()).unwrap()
            };
            let h = 1e-6;
            for j in 0..4 {
                let (plus, minus) = if j < 3 {
                    let mut bp = beta.clone(); bp[j] += h;
                    let mut bm = beta.clone(); bm[j] -= h;
                    (f(&bp, log_b), f(&bm, log_b))
                } else {
                    (f(&beta, log_b + h), f(&beta, log_b - h))
                };
                let fd = (plus - minus) / (2.0 * h);
                let scale = d.gradient[j].abs().max(1.0);
                prop_assert!((fd - d.gradient[j]).abs() / scale < 1e-5, "j={} fd={} an={}", j, fd, d.gradient[j]);
            }
            prop_assert!((d.value - f(&beta, log_b)).abs() < 1e-10);
        }

        #[test]
        fn analytic_hessian_matches_gradient_differences(values in prop::collection::vec(-1.0f64..1.0, 30), log_b in -0.5f64..0.5) {
            let data = random_dataset(&values);
            let beta = DVector::from_vec(vec![0.1, 0.3, -0.4]);
            let d = log_likelihood_derivatives(&data, &beta, log_b).unwrap();
            let h = 1e-5;
            for k in 0..4 {
                let (mut bp, mut bm, mut lp, mut lm) = (beta.clone(), beta.clone(), log_b, log_b);
                if k < 3 { bp[k] += h; bm[k] -= h; } else { lp += h; lm -= h; }
                let gp = log_likelihood_derivatives(&data, &bp, lp).unwrap().gradient;
                let gm = log_likelihood_derivatives(&data, &bm, lm).unwrap().gradient;
                for j in 0..4 {
                    let fd = (gp[j] - gm[j]) / (2.0 * h);
                    prop_assert!((fd - d.hessian[(j, k)]).abs() < 1e-5 * d.hessian[(j, k)].abs().max(1.0));
                }
            }
        }
    }
}
