//! Special functions and the Inverse-Gamma / Normal primitives used by the
//! variational updates, the posterior summaries and the reference estimators.

use crate::error::NumericsError;

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// Digamma function Ψ(x) = d/dx log Γ(x) for x > 0.
///
/// The argument is shifted above 6 with Ψ(x) = Ψ(x+1) − 1/x, then the
/// asymptotic series is summed through x⁻¹⁴.
pub fn digamma(x: f64) -> Result<f64, NumericsError> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(NumericsError::Domain {
            function: "digamma",
            value: x,
        });
    }
    let mut shift = 0.0;
    let mut x = x;
    while x < 6.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli-number coefficients B_2k / (2k)
    let tail = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2
                                        * (1.0 / 132.0
                                            - inv2 * (691.0 / 32_760.0 - inv2 / 12.0))))));
    Ok(shift + x.ln() - 0.5 * inv - tail)
}

/// Natural log of the Gamma function for x > 0.
///
/// Upward recurrence to x ≥ 10 followed by the Stirling series through x⁻¹³.
pub fn log_gamma(x: f64) -> Result<f64, NumericsError> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(NumericsError::Domain {
            function: "log_gamma",
            value: x,
        });
    }
    let mut x = x;
    let mut log_product = 0.0;
    while x < 10.0 {
        log_product += x.ln();
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        * (1.0 / 12.0
            - inv2
                * (1.0 / 360.0
                    - inv2
                        * (1.0 / 1260.0
                            - inv2
                                * (1.0 / 1680.0
                                    - inv2
                                        * (1.0 / 1188.0
                                            - inv2 * (691.0 / 360_360.0 - inv2 / 156.0))))));
    Ok((x - 0.5) * x.ln() - x + HALF_LN_TWO_PI + series - log_product)
}

const GAMMA_MAX_TERMS: usize = 1_000_000;
const GAMMA_EPS: f64 = 1e-16;

/// Regularized lower incomplete gamma P(a, x).
pub fn regularized_gamma_p(a: f64, x: f64) -> Result<f64, NumericsError> {
    check_incomplete_gamma_args(a, x)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        Ok(1.0 - gamma_continued_fraction(a, x)?)
    }
}

/// Regularized upper incomplete gamma Q(a, x) = 1 − P(a, x).
pub fn regularized_gamma_q(a: f64, x: f64) -> Result<f64, NumericsError> {
    check_incomplete_gamma_args(a, x)?;
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    if x < a + 1.0 {
        Ok(1.0 - gamma_series(a, x)?)
    } else {
        gamma_continued_fraction(a, x)
    }
}

fn check_incomplete_gamma_args(a: f64, x: f64) -> Result<(), NumericsError> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(NumericsError::Domain {
            function: "incomplete_gamma(shape)",
            value: a,
        });
    }
    if !(x >= 0.0) {
        return Err(NumericsError::Domain {
            function: "incomplete_gamma(x)",
            value: x,
        });
    }
    Ok(())
}

fn log_gamma_prefactor(a: f64, x: f64) -> Result<f64, NumericsError> {
    Ok(a * x.ln() - x - log_gamma(a)?)
}

fn gamma_series(a: f64, x: f64) -> Result<f64, NumericsError> {
    let mut denom = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..GAMMA_MAX_TERMS {
        denom += 1.0;
        term *= x / denom;
        sum += term;
        if term.abs() < sum.abs() * GAMMA_EPS {
            return Ok((sum.ln() + log_gamma_prefactor(a, x)?).exp().min(1.0));
        }
    }
    Err(NumericsError::NoConvergence {
        routine: "incomplete gamma series",
        iterations: GAMMA_MAX_TERMS,
    })
}

// Modified Lentz evaluation of the continued fraction for Q(a, x).
fn gamma_continued_fraction(a: f64, x: f64) -> Result<f64, NumericsError> {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=GAMMA_MAX_TERMS {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < GAMMA_EPS {
            return Ok((h.ln() + log_gamma_prefactor(a, x)?).exp().min(1.0));
        }
    }
    Err(NumericsError::NoConvergence {
        routine: "incomplete gamma continued fraction",
        iterations: GAMMA_MAX_TERMS,
    })
}

/// Parameters of an Inverse-Gamma(shape, scale) distribution with density
/// ∝ x^-(shape+1) exp(−scale / x).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseGammaParams {
    shape: f64,
    scale: f64,
}

/// Expectations of 1/b, 1/b² and log b under an Inverse-Gamma law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseGammaMoments {
    pub mean_inv: f64,
    pub mean_inv_sq: f64,
    pub mean_log: f64,
}

impl InverseGammaParams {
    pub fn new(shape: f64, scale: f64) -> Result<Self, NumericsError> {
        if !(shape > 0.0) || !shape.is_finite() {
            return Err(NumericsError::InvalidParameter {
                name: "shape",
                value: shape,
            });
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(NumericsError::InvalidParameter {
                name: "scale",
                value: scale,
            });
        }
        Ok(Self { shape, scale })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Mean ω/(α−1), defined for α > 1.
    pub fn mean(&self) -> Option<f64> {
        (self.shape > 1.0).then(|| self.scale / (self.shape - 1.0))
    }

    /// Standard deviation ω/((α−1)√(α−2)), defined for α > 2.
    pub fn sd(&self) -> Option<f64> {
        (self.shape > 2.0).then(|| self.scale / ((self.shape - 1.0) * (self.shape - 2.0).sqrt()))
    }

    pub fn moments(&self) -> InverseGammaMoments {
        inverse_gamma_moments(self)
    }

    pub fn ln_pdf(&self, x: f64) -> Result<f64, NumericsError> {
        if !(x > 0.0) {
            return Err(NumericsError::Domain {
                function: "inverse_gamma_ln_pdf",
                value: x,
            });
        }
        Ok(self.shape * self.scale.ln()
            - log_gamma(self.shape)?
            - (self.shape + 1.0) * x.ln()
            - self.scale / x)
    }

    pub fn cdf(&self, x: f64) -> Result<f64, NumericsError> {
        inverse_gamma_cdf(self, x)
    }

    pub fn quantile(&self, q: f64) -> Result<f64, NumericsError> {
        inverse_gamma_quantile(self, q)
    }
}

/// (E[1/b], E[1/b²], E[log b]) = (α/ω, (α+α²)/ω², log ω − Ψ(α)).
pub fn inverse_gamma_moments(p: &InverseGammaParams) -> InverseGammaMoments {
    let (a, w) = (p.shape, p.scale);
    InverseGammaMoments {
        mean_inv: a / w,
        mean_inv_sq: (a + a * a) / (w * w),
        // shape is validated positive, so digamma cannot fail here
        mean_log: w.ln() - digamma(a).expect("shape validated positive"),
    }
}

/// P(b ≤ x) = Q(α, ω/x).
pub fn inverse_gamma_cdf(p: &InverseGammaParams, x: f64) -> Result<f64, NumericsError> {
    if !(x > 0.0) {
        return Err(NumericsError::Domain {
            function: "inverse_gamma_cdf",
            value: x,
        });
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    regularized_gamma_q(p.shape, p.scale / x)
}

const QUANTILE_BRACKET_STEPS: usize = 2000;
const QUANTILE_BISECTION_STEPS: usize = 400;
const QUANTILE_TOLERANCE: f64 = 1e-8;

/// Inverse of [`inverse_gamma_cdf`] by bracketing and bisection.
pub fn inverse_gamma_quantile(p: &InverseGammaParams, q: f64) -> Result<f64, NumericsError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(NumericsError::Domain {
            function: "inverse_gamma_quantile",
            value: q,
        });
    }
    let start = p.mean().unwrap_or(p.scale);
    let mut lo = start;
    let mut hi = start;
    let mut steps = 0;
    while inverse_gamma_cdf(p, lo)? > q {
        lo *= 0.5;
        steps += 1;
        if steps > QUANTILE_BRACKET_STEPS || lo == 0.0 {
            return Err(NumericsError::NoConvergence {
                routine: "inverse gamma quantile bracket",
                iterations: steps,
            });
        }
    }
    while inverse_gamma_cdf(p, hi)? < q {
        hi *= 2.0;
        steps += 1;
        if steps > QUANTILE_BRACKET_STEPS || hi.is_infinite() {
            return Err(NumericsError::NoConvergence {
                routine: "inverse gamma quantile bracket",
                iterations: steps,
            });
        }
    }
    for _ in 0..QUANTILE_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if inverse_gamma_cdf(p, mid)? < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    let err = (inverse_gamma_cdf(p, x)? - q).abs();
    if err > QUANTILE_TOLERANCE {
        return Err(NumericsError::NoConvergence {
            routine: "inverse gamma quantile bisection",
            iterations: QUANTILE_BISECTION_STEPS,
        });
    }
    Ok(x)
}

/// Complementary error function via erfc(t) = Q(1/2, t²) for t ≥ 0.
pub fn erfc(t: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t >= 0.0 {
        regularized_gamma_q(0.5, t * t).expect("valid incomplete gamma arguments")
    } else {
        2.0 - regularized_gamma_q(0.5, t * t).expect("valid incomplete gamma arguments")
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - HALF_LN_TWO_PI).exp()
}

/// Rational approximation of the standard normal quantile (Acklam), without
/// refinement. Relative error below 1.2e-9; cheap enough for sampling.
pub fn normal_quantile_approx(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Standard normal quantile: rational start plus two Newton corrections.
pub fn normal_quantile(p: f64) -> Result<f64, NumericsError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(NumericsError::Domain {
            function: "normal_quantile",
            value: p,
        });
    }
    let mut x = normal_quantile_approx(p);
    for _ in 0..2 {
        let density = normal_pdf(x);
        if density <= 0.0 {
            break;
        }
        x -= (normal_cdf(x) - p) / density;
    }
    Ok(x)
}

/// log(1 + eˣ) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid 1/(1 + e⁻ˣ).
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
