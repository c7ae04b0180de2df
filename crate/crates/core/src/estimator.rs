//! Confidence-aware Kalman filter over bounding boxes.
//!
//! State is `[cx, cy, w, h, vx, vy, vw, vh]` in pixels and pixels per step.
//! Measurement noise is `R = sigma^2(c) I` with a sigmoid in the tracker
//! confidence, so low-confidence boxes barely move the estimate.

use std::io::Write;

use nalgebra::{SMatrix, SVector};
use serde::Serialize;

use crate::{Error, Result};

pub type Vec8 = SVector<f64, 8>;
pub type Vec4 = SVector<f64, 4>;
pub type Mat8 = SMatrix<f64, 8, 8>;
pub type Mat4 = SMatrix<f64, 4, 4>;
pub type Mat48 = SMatrix<f64, 4, 8>;
pub type Mat84 = SMatrix<f64, 8, 4>;

/// Smallest width or height a posterior box may have.
pub const MIN_BOX_SIZE: f64 = 0.1;
const MAX_CONDITION: f64 = 1e12;

/// How `R` depends on confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    /// `sigma^2(c) = 1 / (1 + exp(lambda (c - gamma)))`.
    ConfidenceAware,
    /// Constant variance regardless of confidence.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KfConfig {
    pub f: Mat8,
    pub h: Mat48,
    pub q: Mat8,
    pub lambda: f64,
    pub gamma: f64,
    pub eta_c: f64,
    pub noise: NoiseModel,
}

impl Default for KfConfig {
    fn default() -> Self {
        Self::new(15.0, 0.4, 0.5, 0.01)
    }
}

impl KfConfig {
    pub fn new(lambda: f64, gamma: f64, eta_c: f64, q: f64) -> Self {
        let mut f = Mat8::identity();
        for i in 0..4 {
            f[(i, i + 4)] = 1.0;
        }
        let mut h = Mat48::zeros();
        for i in 0..4 {
            h[(i, i)] = 1.0;
        }
        Self {
            f,
            h,
            q: Mat8::identity() * q,
            lambda,
            gamma,
            eta_c,
            noise: NoiseModel::ConfidenceAware,
        }
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = noise;
        self
    }

    pub fn measurement_variance(&self, confidence: f64) -> f64 {
        match self.noise {
            NoiseModel::ConfidenceAware => confidence_noise(confidence, self.lambda, self.gamma),
            NoiseModel::Fixed(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KfState {
    pub x: Vec8,
    pub p: Mat8,
}

impl KfState {
    /// Fresh track at `bbox` with zero velocity.
    pub fn from_box(bbox: [f64; 4]) -> Self {
        let mut x = Vec8::zeros();
        for i in 0..4 {
            x[i] = bbox[i];
        }
        let p = Mat8::from_diagonal(&Vec8::from_column_slice(&[
            10.0, 10.0, 10.0, 10.0, 100.0, 100.0, 100.0, 100.0,
        ]));
        Self { x, p }
    }

    pub fn new(x: [f64; 8], p: Mat8) -> Self {
        Self {
            x: Vec8::from_column_slice(&x),
            p,
        }
    }

    pub fn bbox(&self) -> [f64; 4] {
        [self.x[0], self.x[1], self.x[2], self.x[3]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub z: [f64; 4],
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub state: KfState,
    pub prior_box: [f64; 4],
    pub predicted_box: [f64; 4],
    pub measurement_used: bool,
}

pub fn confidence_noise(c: f64, lambda: f64, gamma: f64) -> f64 {
    let c = c.clamp(0.0, 1.0);
    1.0 / (1.0 + (lambda * (c - gamma)).exp())
}

pub fn predict(state: &KfState, config: &KfConfig) -> KfState {
    let x = config.f * state.x;
    let p = config.f * state.p * config.f.transpose() + config.q;
    KfState {
        x,
        p: symmetrize(&p),
    }
}

fn symmetrize(p: &Mat8) -> Mat8 {
    (p + p.transpose()) * 0.5
}

fn innovation(state: &KfState, r: f64, config: &KfConfig) -> Result<Mat4> {
    let s = config.h * state.p * config.h.transpose() + Mat4::identity() * r;
    let s = (s + s.transpose()) * 0.5;
    let eig = s.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 || hi / lo > MAX_CONDITION || !hi.is_finite() {
        let cond = if lo <= 0.0 { f64::INFINITY } else { hi / lo };
        return Err(Error::SingularInnovation(cond));
    }
    Ok(s)
}

/// Kalman gain for a measurement of the given confidence.
pub fn kalman_gain(state: &KfState, confidence: f64, config: &KfConfig) -> Result<Mat84> {
    let r = config.measurement_variance(confidence);
    let s = innovation(state, r, config)?;
    let s_inv = s
        .cholesky()
        .ok_or(Error::SingularInnovation(f64::INFINITY))?
        .inverse();
    Ok(state.p * config.h.transpose() * s_inv)
}

/// Measurement update on a predicted state, with a Joseph-form covariance.
pub fn update(state: &KfState, m: &Measurement, config: &KfConfig) -> Result<KfState> {
    let r = config.measurement_variance(m.confidence);
    let k = kalman_gain(state, m.confidence, config)?;
    let z = Vec4::from_column_slice(&m.z);
    let mut x = state.x + k * (z - config.h * state.x);
    x[2] = x[2].max(MIN_BOX_SIZE);
    x[3] = x[3].max(MIN_BOX_SIZE);
    let ikh = Mat8::identity() - k * config.h;
    let p = ikh * state.p * ikh.transpose() + k * (Mat4::identity() * r) * k.transpose();
    Ok(KfState {
        x,
        p: symmetrize(&p),
    })
}

/// One filter tick: always predicts, and updates only with a measurement whose
/// confidence reaches `eta_c`.
pub fn step(state: &KfState, obs: Option<&Measurement>, config: &KfConfig) -> Result<StepOutput> {
    let prior = predict(state, config);
    let prior_box = prior.bbox();
    match obs {
        Some(m) if m.confidence >= config.eta_c => {
            let post = update(&prior, m, config)?;
            Ok(StepOutput {
                state: post,
                prior_box,
                predicted_box: post.bbox(),
                measurement_used: true,
            })
        }
        _ => Ok(StepOutput {
            state: prior,
            prior_box,
            predicted_box: prior_box,
            measurement_used: false,
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub prior_x: f64,
    pub prior_y: f64,
    pub prior_w: f64,
    pub prior_h: f64,
    pub post_x: f64,
    pub post_y: f64,
    pub post_w: f64,
    pub post_h: f64,
    pub confidence: f64,
    pub measurement_used: bool,
    pub trace_p: f64,
}

impl TraceRow {
    pub fn new(step: usize, out: &StepOutput, confidence: f64) -> Self {
        let [prior_x, prior_y, prior_w, prior_h] = out.prior_box;
        let [post_x, post_y, post_w, post_h] = out.predicted_box;
        Self {
            step,
            prior_x,
            prior_y,
            prior_w,
            prior_h,
            post_x,
            post_y,
            post_w,
            post_h,
            confidence,
            measurement_used: out.measurement_used,
            trace_p: out.state.p.trace(),
        }
    }
}

pub fn write_trace<W: Write>(out: W, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(x: [f64; 8]) -> KfState {
        KfState::new(x, Mat8::identity())
    }

    #[test]
    fn zero_velocity_is_a_fixed_point() {
        let s = predict(&state([10.0, 10.0, 5.0, 5.0, 0.0, 0.0, 0.0, 0.0]), &KfConfig::default());
        assert_eq!(s.bbox(), [10.0, 10.0, 5.0, 5.0]);
    }

    #[test]
    fn constant_velocity_advances_one_step() {
        let s = predict(&state([10.0, 10.0, 5.0, 5.0, 2.0, -1.0, 0.0, 0.0]), &KfConfig::default());
        assert_eq!(s.bbox(), [12.0, 9.0, 5.0, 5.0]);
    }

    #[test]
    fn noiseless_zero_covariance_stays_zero() {
        let cfg = KfConfig::new(15.0, 0.4, 0.5, 0.0);
        let s = predict(&KfState::new([0.0; 8], Mat8::zeros()), &cfg);
        assert_eq!(s.p, Mat8::zeros());
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(confidence_noise(0.4, 15.0, 0.4), 0.5);
        assert!((confidence_noise(1.0, 15.0, 0.4) - 1.0 / (1.0 + 9f64.exp())).abs() < 1e-18);
        assert!((confidence_noise(1.0, 15.0, 0.4) - 1.234e-4).abs() < 1e-7);
        assert!((confidence_noise(0.0, 15.0, 0.4) - 0.997527).abs() < 1e-6);
    }

    #[test]
    fn zero_innovation_leaves_mean() {
        let s = state([3.0, 4.0, 5.0, 6.0, 1.0, 1.0, 0.0, 0.0]);
        let m = Measurement {
            z: [3.0, 4.0, 5.0, 6.0],
            confidence: 0.9,
        };
        assert_eq!(update(&s, &m, &KfConfig::default()).unwrap().x, s.x);
    }

    #[test]
    fn unit_covariances_give_half_gain() {
        let cfg = KfConfig::default().with_noise(NoiseModel::Fixed(1.0));
        let k = kalman_gain(&state([0.0; 8]), 0.9, &cfg).unwrap();
        let mut expect = Mat84::zeros();
        for i in 0..4 {
            expect[(i, i)] = 0.5;
        }
        assert!((k - expect).abs().max() < 1e-15);
    }

    #[test]
    fn confident_measurements_get_larger_gain() {
        let s = state([0.0; 8]);
        let cfg = KfConfig::default();
        let hi = kalman_gain(&s, 1.0, &cfg).unwrap().norm();
        let lo = kalman_gain(&s, 0.4, &cfg).unwrap().norm();
        assert!(hi > lo);
    }

    #[test]
    fn prediction_only_extrapolates() {
        let cfg = KfConfig::default();
        let mut s = state([0.0, 0.0, 5.0, 5.0, 1.0, 0.0, 0.0, 0.0]);
        let mut xs = vec![];
        for _ in 0..5 {
            let out = step(&s, None, &cfg).unwrap();
            assert!(!out.measurement_used);
            xs.push(out.predicted_box[0]);
            s = out.state;
        }
        assert_eq!(xs, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn low_confidence_is_gated() {
        let cfg = KfConfig::default();
        let s = state([0.0, 0.0, 5.0, 5.0, 1.0, 0.0, 0.0, 0.0]);
        let m = Measurement {
            z: [50.0, 50.0, 5.0, 5.0],
            confidence: 0.3,
        };
        let out = step(&s, Some(&m), &cfg).unwrap();
        assert!(!out.measurement_used);
        assert_eq!(out.state, predict(&s, &cfg));
    }

    #[test]
    fn box_size_is_clamped() {
        let cfg = KfConfig::default();
        let s = KfState::from_box([10.0, 10.0, 1.0, 1.0]);
        let m = Measurement {
            z: [10.0, 10.0, -50.0, -50.0],
            confidence: 1.0,
        };
        let post = update(&s, &m, &cfg).unwrap();
        assert_eq!(post.x[2], MIN_BOX_SIZE);
        assert_eq!(post.x[3], MIN_BOX_SIZE);
    }

    #[test]
    fn degenerate_innovation_is_reported() {
        let cfg = KfConfig::default().with_noise(NoiseModel::Fixed(0.0));
        let s = KfState::new([0.0; 8], Mat8::zeros());
        let m = Measurement {
            z: [1.0; 4],
            confidence: 1.0,
        };
        assert!(matches!(update(&s, &m, &cfg), Err(Error::SingularInnovation(_))));
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let cfg = KfConfig::default();
        let s = KfState::from_box([1.0, 2.0, 3.0, 4.0]);
        let out = step(&s, None, &cfg).unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &[TraceRow::new(0, &out, 0.0)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,prior_x,prior_y,prior_w,prior_h,post_x,post_y,post_w,post_h,confidence,measurement_used,trace_p"
        );
        assert!(lines.next().unwrap().starts_with("0,1.0,2.0,3.0,4.0,"));
    }
}
