//! Posterior summaries: means, SDs, equal-tailed and highest-density intervals.

use std::fmt;

use crate::cavi::VariationalState;
use crate::error::NumericsError;
use crate::numerics::{normal_quantile, InverseGammaParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalKind {
    /// equal-tailed
    Eti,
    /// highest density
    Hdi,
    /// normal-theory confidence interval
    Wald,
}

impl fmt::Display for IntervalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IntervalKind::Eti => "ETI",
            IntervalKind::Hdi => "HDI",
            IntervalKind::Wald => "Wald",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    /// None when the SD is undefined (Inverse-Gamma with α ≤ 2) or not tracked.
    pub sd: Option<f64>,
    pub interval_low: f64,
    pub interval_high: f64,
    pub interval_kind: IntervalKind,
}

impl ParameterSummary {
    pub fn interval_length(&self) -> f64 {
        self.interval_high - self.interval_low
    }

    pub fn covers(&self, value: f64) -> bool {
        self.interval_low <= value && value <= self.interval_high
    }
}

fn check_level(level: f64) -> Result<(), NumericsError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(NumericsError::InvalidParameter {
            name: "level",
            value: level,
        });
    }
    Ok(())
}

/// Normal ETIs μⱼ ± z·√Σⱼⱼ for each coefficient.
pub fn summarize_coefficients(
    state: &VariationalState,
    names: &[String],
    level: f64,
) -> Result<Vec<ParameterSummary>, NumericsError> {
    check_level(level)?;
    let z = normal_quantile(0.5 * (1.0 + level))?;
    Ok(state
        .coef_mean
        .iter()
        .enumerate()
        .map(|(j, &mean)| {
            let sd = state.coef_cov[(j, j)].max(0.0).sqrt();
            ParameterSummary {
                name: names.get(j).cloned().unwrap_or_else(|| format!("beta{j}")),
                mean,
                sd: Some(sd),
                interval_low: mean - z * sd,
                interval_high: mean + z * sd,
                interval_kind: IntervalKind::Eti,
            }
        })
        .collect())
}

const GOLDEN_TOLERANCE: f64 = 1e-8;

/// Shortest interval of the given mass: minimizes Q(t + level) − Q(t) over the
/// lower-tail mass t by golden-section search.
pub fn inverse_gamma_hdi(
    params: &InverseGammaParams,
    level: f64,
) -> Result<(f64, f64), NumericsError> {
    check_level(level)?;
    let edge = 1e-12;
    let length = |t: f64| -> Result<f64, NumericsError> {
        Ok(params.quantile(t + level)? - params.quantile(t)?)
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (edge, 1.0 - level - edge);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = length(c)?;
    let mut fd = length(d)?;
    let mut steps = 0;
    while b - a > GOLDEN_TOLERANCE {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = length(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = length(d)?;
        }
        steps += 1;
        if steps > 200 {
            return Err(NumericsError::NoConvergence {
                routine: "inverse_gamma_hdi",
                iterations: steps,
            });
        }
    }
    let t = 0.5 * (a + b);
    Ok((params.quantile(t)?, params.quantile(t + level)?))
}

pub fn inverse_gamma_eti(params: &InverseGammaParams, level: f64) -> Result<(f64, f64), NumericsError> {
    check_level(level)?;
    let tail = 0.5 * (1.0 - level);
    Ok((params.quantile(tail)?, params.quantile(1.0 - tail)?))
}

/// Mean ω/(α−1), SD ω/((α−1)√(α−2)) and HDI of q(b).
pub fn summarize_scale(state: &VariationalState, level: f64) -> Result<ParameterSummary, NumericsError> {
    let params = InverseGammaParams::new(state.scale_shape, state.scale_rate)?;
    let (low, high) = inverse_gamma_hdi(&params, level)?;
    Ok(ParameterSummary {
        name: "scale".into(),
        mean: params.mean().unwrap_or(f64::INFINITY),
        sd: params.sd(),
        interval_low: low,
        interval_high: high,
        interval_kind: IntervalKind::Hdi,
    })
}

/// exp of the mean and of both interval endpoints.
pub fn acceleration_factor(summary: &ParameterSummary) -> ParameterSummary {
    ParameterSummary {
        name: format!("exp({})", summary.name),
        mean: summary.mean.exp(),
        sd: None,
        interval_low: summary.interval_low.exp(),
        interval_high: summary.interval_high.exp(),
        interval_kind: summary.interval_kind,
    }
}

/// Linear-interpolation sample quantile of sorted data.
pub fn sample_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Shortest window of sorted draws holding ⌈level·n⌉ of them.
pub fn sample_hdi(sorted: &[f64], level: f64) -> (f64, f64) {
    let n = sorted.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let k = ((level * n as f64).ceil() as usize).clamp(1, n);
    let best = (0..=n - k)
        .min_by(|&i, &j| {
            (sorted[i + k - 1] - sorted[i]).total_cmp(&(sorted[j + k - 1] - sorted[j]))
        })
        .unwrap_or(0);
    (sorted[best], sorted[best + k - 1])
}

/// Mean, SD and an ETI or HDI from draws.
pub fn summarize_samples(name: &str, draws: &[f64], level: f64, kind: IntervalKind) -> ParameterSummary {
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (low, high) = match kind {
        IntervalKind::Hdi => sample_hdi(&sorted, level),
        _ => {
            let tail = 0.5 * (1.0 - level);
            (sample_quantile(&sorted, tail), sample_quantile(&sorted, 1.0 - tail))
        }
    };
    ParameterSummary {
        name: name.to_string(),
        mean,
        sd: Some(var.sqrt()),
        interval_low: low,
        interval_high: high,
        interval_kind: kind,
    }
}
