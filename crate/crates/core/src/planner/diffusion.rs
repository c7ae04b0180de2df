//! Noise-prediction objective, gradient check and the denoising sampler.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::network::NoisePredictor;
use super::schedule::{forward_noise, NoiseSchedule};
use crate::dataset::PlanSample;
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Anything that predicts the noise in a noised trajectory.
pub trait Denoiser {
    fn predict(&self, x: &[f64], cond: &[f64], k: usize) -> Result<Vec<f64>>;
}

impl Denoiser for NoisePredictor {
    fn predict(&self, x: &[f64], cond: &[f64], k: usize) -> Result<Vec<f64>> {
        Ok(self.forward(x, cond, k)?.output)
    }
}

/// One training example after its noise draw.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisedExample {
    pub x: Vec<f64>,
    pub cond: Vec<f64>,
    pub k: usize,
    pub eps: Vec<f64>,
}

pub fn draw_noise(dim: usize, rng: &mut Rng) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Draws `k` uniform in `1..=K` and standard normal noise for one sample.
pub fn noise_example(sample: &PlanSample, schedule: &NoiseSchedule, rng: &mut Rng) -> Result<NoisedExample> {
    let a0 = sample.flat_traj();
    let k = rng.random_range(1..=schedule.k);
    let eps = draw_noise(a0.len(), rng);
    let x = forward_noise(&a0, k, &eps, schedule)?;
    Ok(NoisedExample {
        x,
        cond: sample.condition(),
        k,
        eps,
    })
}

pub fn squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

pub fn example_loss(model: &dyn Denoiser, ex: &NoisedExample) -> Result<f64> {
    Ok(squared_error(&ex.eps, &model.predict(&ex.x, &ex.cond, ex.k)?))
}

/// Monte-Carlo estimate of the noise-prediction loss over a batch.
pub fn loss(model: &dyn Denoiser, batch: &[PlanSample], schedule: &NoiseSchedule, rng: &mut Rng) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut total = 0.0;
    for s in batch {
        total += example_loss(model, &noise_example(s, schedule, rng)?)?;
    }
    Ok(total / batch.len() as f64)
}

/// Loss of one example and its parameter gradient, scaled by `weight`.
pub fn example_gradient(model: &NoisePredictor, ex: &NoisedExample, weight: f64, grad: &mut [f64]) -> Result<f64> {
    let cache = model.forward(&ex.x, &ex.cond, ex.k)?;
    let g: Vec<f64> = cache
        .output
        .iter()
        .zip(&ex.eps)
        .map(|(o, e)| 2.0 * weight * (o - e))
        .collect();
    model.backward(&cache, &g, grad);
    Ok(squared_error(&ex.eps, &cache.output))
}

/// Denominator floor that keeps near-zero gradients from inflating the
/// relative error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub checked: usize,
}

/// Compares analytic gradients with central differences on `n_params`
/// randomly chosen parameters, for a single fixed noise draw.
pub fn grad_check(
    model: &NoisePredictor,
    sample: &PlanSample,
    schedule: &NoiseSchedule,
    h: f64,
    n_params: usize,
    seed: u64,
) -> Result<GradCheck> {
    if !(1e-6..=1e-3).contains(&h) {
        return Err(Error::InvalidArgument(format!("step {h} outside [1e-6, 1e-3]")));
    }
    let mut r = rng::child(seed, &[0x6c]);
    let ex = noise_example(sample, schedule, &mut r)?;
    let mut grad = vec![0.0; model.params.len()];
    example_gradient(model, &ex, 1.0, &mut grad)?;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    let n = n_params.min(model.params.len());
    let picks = rand::seq::index::sample(&mut r, model.params.len(), n);
    for i in picks.iter() {
        let orig = probe.params[i];
        probe.params[i] = orig + h;
        let up = example_loss(&probe, &ex)?;
        probe.params[i] = orig - h;
        let down = example_loss(&probe, &ex)?;
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let denom = grad[i].abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max((grad[i] - numeric).abs() / denom);
    }
    Ok(GradCheck {
        max_relative_error: worst,
        checked: n,
    })
}

/// Runs the denoising recursion from seeded Gaussian noise and clamps the
/// result to the unit box. Returns the flat trajectory.
pub fn sample_plan(model: &dyn Denoiser, cond: &[f64], dim: usize, schedule: &NoiseSchedule, seed: u64) -> Result<Vec<f64>> {
    let mut r = rng::child(seed, &[0xd1f]);
    let mut x = draw_noise(dim, &mut r);
    for k in (1..=schedule.k).rev() {
        let eps = model.predict(&x, cond, k)?;
        let (a, p, s) = (schedule.alpha[k], schedule.phi[k], schedule.sigma[k]);
        for (xi, e) in x.iter_mut().zip(&eps) {
            *xi = a * (*xi - p * e);
        }
        if s > 0.0 {
            for xi in x.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut r);
                *xi += s * z;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteOutput);
        }
    }
    Ok(x.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect())
}

/// Flat `[x0, y0, x1, y1, ...]` to waypoint pairs.
pub fn unflatten(flat: &[f64]) -> Vec<[f64; 2]> {
    flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}
