//! Fully connected noise predictor with hand-derived gradients.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Flattened trajectory length, `2 * T_p`.
    pub traj_dim: usize,
    pub cond_dim: usize,
    /// Width of the sinusoidal step embedding; even.
    pub time_dim: usize,
    pub hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            traj_dim: 32,
            cond_dim: 260,
            time_dim: 32,
            hidden: 256,
        }
    }
}

impl NetConfig {
    pub fn input_dim(&self) -> usize {
        self.traj_dim + self.cond_dim + self.time_dim
    }

    /// (rows, cols) of the three weight matrices.
    fn shapes(&self) -> [(usize, usize); 3] {
        [
            (self.hidden, self.input_dim()),
            (self.hidden, self.hidden),
            (self.traj_dim, self.hidden),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.shapes().iter().map(|(r, c)| r * c + r).sum()
    }
}

/// Sinusoidal embedding of the diffusion step.
pub fn time_embedding(k: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let a = k as f64 * freq;
        out[2 * i] = a.sin();
        out[2 * i + 1] = a.cos();
    }
    out
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Activations kept for the backward pass.
pub struct Cache {
    input: Vec<f64>,
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    pub output: Vec<f64>,
}

/// Two SiLU hidden layers. Parameters are stored flat in declaration order:
/// `W1, b1, W2, b2, W3, b3`, weights row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePredictor {
    pub config: NetConfig,
    pub params: Vec<f64>,
}

fn matvec(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = b[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

impl NoisePredictor {
    /// Scaled-normal initialization, zero biases.
    pub fn new(config: NetConfig, rng: &mut Rng) -> Self {
        let mut params = Vec::with_capacity(config.param_count());
        for (rows, cols) in config.shapes() {
            let n = Normal::new(0.0, (1.0 / cols as f64).sqrt()).expect("positive sigma");
            params.extend((0..rows * cols).map(|_| n.sample(rng)));
            params.extend(std::iter::repeat(0.0).take(rows));
        }
        Self { config, params }
    }

    pub fn zeros(config: NetConfig) -> Self {
        Self {
            config,
            params: vec![0.0; config.param_count()],
        }
    }

    pub fn from_params(config: NetConfig, params: Vec<f64>) -> Result<Self> {
        if params.len() != config.param_count() {
            return Err(Error::DimensionMismatch {
                expected: config.param_count(),
                got: params.len(),
            });
        }
        Ok(Self { config, params })
    }

    /// Offsets of (W, b) for each layer.
    fn offsets(&self) -> [(usize, usize); 3] {
        let mut out = [(0, 0); 3];
        let mut at = 0;
        for (i, (r, c)) in self.config.shapes().into_iter().enumerate() {
            out[i] = (at, at + r * c);
            at += r * c + r;
        }
        out
    }

    fn layer(&self, i: usize) -> (&[f64], &[f64]) {
        let (r, c) = self.config.shapes()[i];
        let (w, b) = self.offsets()[i];
        (&self.params[w..w + r * c], &self.params[b..b + r])
    }

    pub fn input(&self, x: &[f64], cond: &[f64], k: usize) -> Result<Vec<f64>> {
        let c = &self.config;
        if x.len() != c.traj_dim {
            return Err(Error::DimensionMismatch {
                expected: c.traj_dim,
                got: x.len(),
            });
        }
        if cond.len() != c.cond_dim {
            return Err(Error::DimensionMismatch {
                expected: c.cond_dim,
                got: cond.len(),
            });
        }
        let mut v = Vec::with_capacity(c.input_dim());
        v.extend_from_slice(x);
        v.extend_from_slice(cond);
        v.extend(time_embedding(k, c.time_dim));
        Ok(v)
    }

    pub fn forward(&self, x: &[f64], cond: &[f64], k: usize) -> Result<Cache> {
        let input = self.input(x, cond, k)?;
        let hdim = self.config.hidden;
        let (w1, b1) = self.layer(0);
        let mut z1 = vec![0.0; hdim];
        matvec(w1, b1, &input, &mut z1);
        let h1: Vec<f64> = z1.iter().map(|&z| silu(z)).collect();
        let (w2, b2) = self.layer(1);
        let mut z2 = vec![0.0; hdim];
        matvec(w2, b2, &h1, &mut z2);
        let h2: Vec<f64> = z2.iter().map(|&z| silu(z)).collect();
        let (w3, b3) = self.layer(2);
        let mut output = vec![0.0; self.config.traj_dim];
        matvec(w3, b3, &h2, &mut output);
        Ok(Cache {
            input,
            z1,
            h1,
            z2,
            h2,
            output,
        })
    }

    /// Adds the parameter gradient for upstream output gradient `g` into `grad`.
    pub fn backward(&self, cache: &Cache, g: &[f64], grad: &mut [f64]) {
        let offs = self.offsets();
        let hdim = self.config.hidden;

        let back = |layer: usize, gz: &[f64], inp: &[f64], grad: &mut [f64]| {
            let (w, b) = offs[layer];
            let cols = inp.len();
            for (r, &gr) in gz.iter().enumerate() {
                if gr == 0.0 {
                    continue;
                }
                let row = &mut grad[w + r * cols..w + (r + 1) * cols];
                for (dst, &x) in row.iter_mut().zip(inp) {
                    *dst += gr * x;
                }
                grad[b + r] += gr;
            }
        };
        let input_grad = |layer: usize, gz: &[f64], cols: usize| -> Vec<f64> {
            let (w, _) = offs[layer];
            let mut out = vec![0.0; cols];
            for (r, &gr) in gz.iter().enumerate() {
                if gr == 0.0 {
                    continue;
                }
                let row = &self.params[w + r * cols..w + (r + 1) * cols];
                for (o, &wv) in out.iter_mut().zip(row) {
                    *o += gr * wv;
                }
            }
            out
        };

        back(2, g, &cache.h2, grad);
        let gh2 = input_grad(2, g, hdim);
        let gz2: Vec<f64> = gh2.iter().zip(&cache.z2).map(|(g, &z)| g * silu_grad(z)).collect();
        back(1, &gz2, &cache.h1, grad);
        let gh1 = input_grad(1, &gz2, hdim);
        let gz1: Vec<f64> = gh1.iter().zip(&cache.z1).map(|(g, &z)| g * silu_grad(z)).collect();
        back(0, &gz1, &cache.input, grad);
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn shapes_and_counts() {
        let c = NetConfig::default();
        assert_eq!(c.input_dim(), 324);
        assert_eq!(c.param_count(), 324 * 256 + 256 + 256 * 256 + 256 + 256 * 32 + 32);
        let net = NoisePredictor::new(c, &mut rng::seeded(1));
        let out = net.forward(&[0.1; 32], &[0.0; 260], 7).unwrap().output;
        assert_eq!(out.len(), 32);
        assert!(out.iter().all(|v| v.is_finite()));
        assert!(net.forward(&[0.1; 31], &[0.0; 260], 7).is_err());
    }

    #[test]
    fn embedding_is_bounded() {
        let e = time_embedding(50, 32);
        assert!(e.iter().all(|v| v.abs() <= 1.0));
        assert_eq!(time_embedding(0, 4), vec![0.0, 1.0, 0.0, 1.0]);
    }
}
