//! Cosine variance schedule and the per-step sampling coefficients.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Offset that keeps the first betas away from zero.
const COSINE_S: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

/// Arrays are indexed by step `k` in `1..=K`; index 0 holds the clean
/// endpoint (`alpha_bar[0] = 1`) and unused zeros elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub k: usize,
    pub beta: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    /// Multiplier outside the bracket of the denoising update.
    pub alpha: Vec<f64>,
    /// Weight of the predicted noise inside the bracket.
    pub phi: Vec<f64>,
    /// Standard deviation of the fresh noise added after each update.
    pub sigma: Vec<f64>,
}

fn f(t: f64, k: usize) -> f64 {
    let x = (t / k as f64 + COSINE_S) / (1.0 + COSINE_S) * std::f64::consts::FRAC_PI_2;
    x.cos().powi(2)
}

pub fn build_schedule(k: usize) -> Result<NoiseSchedule> {
    if k == 0 {
        return Err(Error::InvalidArgument("schedule needs at least one step".into()));
    }
    let f0 = f(0.0, k);
    let mut beta = vec![0.0; k + 1];
    let mut alpha_bar = vec![1.0; k + 1];
    for i in 1..=k {
        let ratio = (f(i as f64, k) / f0) / (f((i - 1) as f64, k) / f0);
        beta[i] = (1.0 - ratio).clamp(0.0, MAX_BETA);
        alpha_bar[i] = alpha_bar[i - 1] * (1.0 - beta[i]);
    }
    let mut alpha = vec![0.0; k + 1];
    let mut phi = vec![0.0; k + 1];
    let mut sigma = vec![0.0; k + 1];
    for i in 1..=k {
        alpha[i] = 1.0 / (1.0 - beta[i]).sqrt();
        phi[i] = beta[i] / (1.0 - alpha_bar[i]).sqrt();
        if i > 1 {
            let var = beta[i] * (1.0 - alpha_bar[i - 1]) / (1.0 - alpha_bar[i]);
            sigma[i] = var.max(0.0).sqrt();
        }
    }
    Ok(NoiseSchedule {
        k,
        beta,
        alpha_bar,
        alpha,
        phi,
        sigma,
    })
}

impl NoiseSchedule {
    /// Coefficient of the clean trajectory in the noised one.
    pub fn signal(&self, k: usize) -> f64 {
        self.alpha_bar[k].sqrt()
    }

    /// Coefficient of the noise in the noised trajectory.
    pub fn noise(&self, k: usize) -> f64 {
        (1.0 - self.alpha_bar[k]).sqrt()
    }

    pub fn check_step(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.k {
            return Err(Error::InvalidArgument(format!("step {k} outside 1..={}", self.k)));
        }
        Ok(())
    }

    /// Same schedule with every `sigma` zeroed.
    pub fn deterministic(&self) -> Self {
        Self {
            sigma: vec![0.0; self.k + 1],
            ..self.clone()
        }
    }
}

/// `signal(k) * a0 + noise(k) * eps`.
pub fn forward_noise(a0: &[f64], k: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    schedule.check_step(k)?;
    if a0.len() != eps.len() {
        return Err(Error::DimensionMismatch {
            expected: a0.len(),
            got: eps.len(),
        });
    }
    let (s, n) = (schedule.signal(k), schedule.noise(k));
    Ok(a0.iter().zip(eps).map(|(a, e)| s * a + n * e).collect())
}

/// Inverts `forward_noise` given the noise that was added.
pub fn predict_clean(ak: &[f64], k: usize, eps: &[f64], schedule: &NoiseSchedule) -> Vec<f64> {
    let (s, n) = (schedule.signal(k), schedule.noise(k));
    ak.iter().zip(eps).map(|(a, e)| (a - n * e) / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn endpoint_is_nearly_pure_noise() {
        let s = build_schedule(50).unwrap();
        assert!(s.signal(50) <= 0.05);
        for k in 2..=50 {
            assert!(s.signal(k) < s.signal(k - 1));
        }
        assert_eq!(s.sigma[1], 0.0);
    }

    #[test]
    fn single_step_schedule() {
        let s = build_schedule(1).unwrap();
        assert_eq!(s.k, 1);
        assert_eq!(s.sigma[1], 0.0);
        assert!(build_schedule(0).is_err());
    }

    #[test]
    fn coefficients_finite_over_a_sweep() {
        for k in 1..=200 {
            let s = build_schedule(k).unwrap();
            for i in 1..=k {
                assert!(s.sigma[i].is_finite() && s.sigma[i] >= 0.0);
                assert!(s.alpha[i].is_finite() && s.alpha[i] > 0.0);
                assert!(s.phi[i].is_finite() && s.phi[i] > 0.0);
            }
        }
    }

    #[test]
    fn forward_noise_limits() {
        let s = build_schedule(50).unwrap();
        let a0 = vec![0.3, -0.2, 0.7];
        let zero = vec![0.0; 3];
        let eps = vec![1.0, -2.0, 0.5];
        let x = forward_noise(&a0, 10, &zero, &s).unwrap();
        for (x, a) in x.iter().zip(&a0) {
            assert_eq!(*x, s.signal(10) * a);
        }
        let x = forward_noise(&zero, 10, &eps, &s).unwrap();
        for (x, e) in x.iter().zip(&eps) {
            assert_eq!(*x, s.noise(10) * e);
        }
        assert!(forward_noise(&a0, 0, &eps, &s).is_err());
        assert!(forward_noise(&a0, 51, &eps, &s).is_err());
    }

    #[test]
    fn forward_noise_variance() {
        let s = build_schedule(50).unwrap();
        let mut r = rng::seeded(3);
        let k = 20;
        let n = 100_000;
        let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let x = forward_noise(&vec![0.0; n], k, &eps, &s).unwrap();
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let target = s.noise(k).powi(2);
        assert!((var / target - 1.0).abs() < 0.02);
    }

    #[test]
    fn exact_noise_roundtrip() {
        let s = build_schedule(50).unwrap();
        let a0 = vec![0.25, -0.5, 0.125, 0.9];
        let eps = vec![0.3, 1.2, -0.7, 0.05];
        for k in 1..=50 {
            let x = forward_noise(&a0, k, &eps, &s).unwrap();
            let back = predict_clean(&x, k, &eps, &s);
            for (b, a) in back.iter().zip(&a0) {
                assert!((b - a).abs() < 1e-9, "k={k}");
            }
        }
    }
}
