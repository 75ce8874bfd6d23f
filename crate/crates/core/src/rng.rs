//! Seeded random streams and inverse-CDF draws.
//!
//! Each (seed, index, role) triple maps to its own ChaCha20 stream, so the
//! numbers drawn for one purpose never depend on what else was sampled.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::numerics::normal_quantile_approx;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamRole {
    ContinuousCovariate = 0,
    BinaryCovariate = 1,
    Noise = 2,
    Censoring = 3,
    Sampler = 4,
}

const ROLES: u64 = 8;

pub fn stream(seed: u64, index: u64, role: StreamRole) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_mul(ROLES).wrapping_add(role as u64));
    rng
}

/// Uniform on the open interval (0, 1) from the top 53 bits.
pub fn uniform(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

pub fn logistic_from_uniform(u: f64) -> f64 {
    (u / (1.0 - u)).ln()
}

pub fn logistic(rng: &mut impl RngCore) -> f64 {
    logistic_from_uniform(uniform(rng))
}

pub fn standard_normal(rng: &mut impl RngCore) -> f64 {
    normal_quantile_approx(uniform(rng))
}

pub fn bernoulli(rng: &mut impl RngCore, p: f64) -> bool {
    uniform(rng) < p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_median() {
        assert_eq!(logistic_from_uniform(0.5), 0.0);
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: Vec<u64> = (0..4).map(|_| stream(7, 3, StreamRole::Noise).next_u64()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        let mut x = stream(7, 3, StreamRole::Noise);
        let mut y = stream(7, 3, StreamRole::Censoring);
        let mut z = stream(7, 4, StreamRole::Noise);
        let (vx, vy, vz) = (x.next_u64(), y.next_u64(), z.next_u64());
        assert!(vx != vy && vx != vz && vy != vz);
    }

    #[test]
    fn uniform_moments() {
        let mut rng = stream(1, 0, StreamRole::Noise);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| uniform(&mut rng)).collect();
        assert!(draws.iter().all(|&u| u > 0.0 && u < 1.0));
        let mean = draws.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 4.0 * (1.0 / 12.0f64 / n as f64).sqrt());
    }

    #[test]
    fn normal_and_logistic_variance() {
        let mut rng = stream(2, 0, StreamRole::Noise);
        let n = 200_000;
        let z: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let var = z.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!((var - 1.0).abs() < 0.02, "{var}");
        let l: Vec<f64> = (0..n).map(|_| logistic(&mut rng)).collect();
        let var = l.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let target = std::f64::consts::PI.powi(2) / 3.0;
        assert!((var - target).abs() < 0.05 * target, "{var}");
    }
}
