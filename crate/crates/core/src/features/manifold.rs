//! Synthetic instance-feature manifolds.
//!
//! Every instance `k` owns a unit mean direction `mu_k`. Views are generated
//! by a shared set of view directions `v_m`, orthonormal and orthogonal to all
//! means:
//!
//! ```text
//! g_k(theta) = normalize(mu_k + sum_m A_k sin(theta + phase_km) v_m)
//! ```
//!
//! With `|u| <= r` for the view offset `u`, two views of the same instance are
//! at most `2 atan(r)` apart, so choosing `r = tan(acos(delta) / 2)` makes the
//! worst-case intra-instance cosine exactly `delta`. Because the view space is
//! shared, two different instances are most similar when their view offsets
//! align at full length, where the cosine is `(c + r^2) / (1 + r^2)` for the
//! mean-direction cosine `c`; solving that for `eta` fixes `c`.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::vector::FeatureVector;
use crate::rng::{self, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceManifold {
    pub instance_id: u32,
    pub mean_direction: FeatureVector,
    pub view_basis: Vec<FeatureVector>,
    pub view_amplitude: f64,
    pub cohesion_delta: f64,
    /// Phase of each view direction; empty means all zero.
    #[serde(default)]
    pub view_phases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldSet {
    pub dim: usize,
    pub separation_eta: f64,
    pub manifolds: Vec<InstanceManifold>,
}

/// Parameters of [`generate_manifold_set`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifoldSpec {
    pub num_instances: usize,
    pub dim: usize,
    pub cohesion_delta: f64,
    pub separation_eta: f64,
    pub num_view_dirs: usize,
}

impl Default for ManifoldSpec {
    fn default() -> Self {
        Self {
            num_instances: 5,
            dim: 64,
            cohesion_delta: 0.8,
            separation_eta: 0.2,
            num_view_dirs: 4,
        }
    }
}

/// Largest view-offset norm that keeps intra-instance cosine at `delta`.
pub fn view_radius(delta: f64) -> f64 {
    (delta.acos() / 2.0).tan()
}

/// Cosine between distinct mean directions that puts the worst inter-instance
/// cosine exactly at `eta`.
pub fn mean_cosine(delta: f64, eta: f64) -> f64 {
    let r2 = view_radius(delta).powi(2);
    eta * (1.0 + r2) - r2
}

pub fn generate_manifold_set(spec: &ManifoldSpec, seed: u64) -> Result<ManifoldSet> {
    let ManifoldSpec {
        num_instances: k,
        dim,
        cohesion_delta: delta,
        separation_eta: eta,
        num_view_dirs: m,
    } = *spec;
    if k == 0 {
        return Err(Error::InvalidArgument("num_instances must be >= 1".into()));
    }
    if m == 0 || m + 1 > dim {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= num_view_dirs < dim, got {m} view dirs in dim {dim}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("cohesion delta {delta} outside (0,1)")));
    }
    if !(eta > -1.0 && eta < 1.0) {
        return Err(Error::InvalidArgument(format!("separation eta {eta} outside (-1,1)")));
    }

    let c = if k == 1 { 0.0 } else { mean_cosine(delta, eta) };
    // Equicorrelated Gram matrix is positive definite iff 1 + (k-1)c > 0.
    if k > 1 && 1.0 + (k as f64 - 1.0) * c <= 1e-9 {
        return Err(Error::InfeasibleGeometry(format!(
            "{k} mean directions cannot all have pairwise cosine {c:.4} \
             (needs > {:.4}) for delta={delta}, eta={eta}",
            -1.0 / (k as f64 - 1.0)
        )));
    }
    if k + m > dim {
        return Err(Error::InfeasibleGeometry(format!(
            "{k} instances plus {m} shared view directions need {} dimensions, have {dim}",
            k + m
        )));
    }

    let mut rng = rng::seeded(seed);
    let frame = random_orthonormal_frame(dim, k + m, &mut rng);

    let gram = DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { c });
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::InfeasibleGeometry("mean Gram matrix not positive definite".into()))?;
    let l = chol.l();

    let view_basis: Vec<FeatureVector> = frame[k..k + m].to_vec();
    let r = view_radius(delta);

    let manifolds = (0..k)
        .map(|inst| {
            let mut mean = FeatureVector::zeros(dim);
            for (j, e) in frame.iter().take(k).enumerate() {
                mean.axpy(l[(inst, j)], e);
            }
            let mean = mean.normalized().expect("Cholesky rows of a unit-diagonal Gram are unit");
            let phases = sample_phases(m, &mut rng);
            let amplitude = r / max_sin_sq_sum(&phases).sqrt();
            InstanceManifold {
                instance_id: inst as u32,
                mean_direction: mean,
                view_basis: view_basis.clone(),
                view_amplitude: amplitude,
                cohesion_delta: delta,
                view_phases: phases,
            }
        })
        .collect();

    Ok(ManifoldSet {
        dim,
        separation_eta: eta,
        manifolds,
    })
}

/// Phases for `m` view directions. For `m >= 2` we reject draws whose
/// resultant `|sum exp(2 i phase)|` exceeds `m / 2`, which keeps every view
/// offset at least `r / sqrt(3)` long while leaving the manifold anisotropic.
fn sample_phases(m: usize, rng: &mut Rng) -> Vec<f64> {
    if m == 1 {
        return vec![0.0];
    }
    loop {
        let phases: Vec<f64> = (0..m)
            .map(|_| rng.random::<f64>() * std::f64::consts::TAU)
            .collect();
        if resultant(&phases) <= m as f64 / 2.0 {
            return phases;
        }
    }
}

fn resultant(phases: &[f64]) -> f64 {
    let (s, c) = phases
        .iter()
        .fold((0.0, 0.0), |(s, c), p| (s + (2.0 * p).sin(), c + (2.0 * p).cos()));
    s.hypot(c)
}

/// `max_theta sum_m sin^2(theta + phase_m)`, in closed form.
fn max_sin_sq_sum(phases: &[f64]) -> f64 {
    (phases.len() as f64 + resultant(phases)) / 2.0
}

fn random_orthonormal_frame(dim: usize, count: usize, rng: &mut Rng) -> Vec<FeatureVector> {
    let mut frame: Vec<FeatureVector> = Vec::with_capacity(count);
    while frame.len() < count {
        let mut v = FeatureVector::new((0..dim).map(|_| StandardNormal.sample(rng)).collect());
        // Two passes of modified Gram-Schmidt.
        for _ in 0..2 {
            for e in &frame {
                let p = v.dot(e);
                v.axpy(-p, e);
            }
        }
        if let Ok(u) = v.normalized() {
            if v.norm() > 1e-6 {
                frame.push(u);
            }
        }
    }
    frame
}

impl InstanceManifold {
    pub fn dim(&self) -> usize {
        self.mean_direction.dim()
    }

    fn phase(&self, m: usize) -> f64 {
        self.view_phases.get(m).copied().unwrap_or(0.0)
    }

    /// Un-normalised point `mu + u(theta)`.
    pub fn raw_view(&self, view_angle: f64) -> FeatureVector {
        let mut v = self.mean_direction.clone();
        for (m, b) in self.view_basis.iter().enumerate() {
            v.axpy(self.view_amplitude * (view_angle + self.phase(m)).sin(), b);
        }
        v
    }
}

/// Synthetic descriptor: the unit feature of `manifold` seen from
/// `view_angle`, plus isotropic Gaussian noise of per-coordinate scale
/// `noise_scale` drawn from a stream seeded with `seed`.
pub fn describe(
    manifold: &InstanceManifold,
    view_angle: f64,
    noise_scale: f64,
    seed: u64,
) -> FeatureVector {
    describe_with(manifold, view_angle, noise_scale, &mut rng::seeded(seed))
}

pub fn describe_with(
    manifold: &InstanceManifold,
    view_angle: f64,
    noise_scale: f64,
    rng: &mut Rng,
) -> FeatureVector {
    let mut v = manifold.raw_view(view_angle);
    if noise_scale > 0.0 {
        let noise = FeatureVector::new(
            (0..v.dim())
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    noise_scale * z
                })
                .collect(),
        );
        v.axpy(1.0, &noise);
    }
    let n = v.norm();
    if n == 1.0 {
        return v;
    }
    // |mu + u| >= 1 since u is orthogonal to mu; only extreme noise can zero it.
    v.normalized().unwrap_or_else(|_| manifold.mean_direction.clone())
}

/// Sampled extremes of the pairwise cosines of a manifold set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificationReport {
    pub min_intra: f64,
    pub max_inter: f64,
    pub pairs: usize,
}

impl CertificationReport {
    pub fn holds(&self, delta: f64, eta: f64, tol: f64) -> bool {
        self.min_intra >= delta - tol && self.max_inter <= eta + tol
    }
}

impl ManifoldSet {
    pub fn cohesion_delta(&self) -> f64 {
        self.manifolds
            .iter()
            .map(|m| m.cohesion_delta)
            .fold(f64::INFINITY, f64::min)
    }

    /// Monte-Carlo check of the cohesion and separation bounds over
    /// `pairs` random noise-free view pairs per category.
    pub fn certify(&self, pairs: usize, seed: u64) -> CertificationReport {
        let mut rng = rng::seeded(seed);
        let n = self.manifolds.len();
        let mut min_intra = f64::INFINITY;
        let mut max_inter = f64::NEG_INFINITY;
        let tau = std::f64::consts::TAU;
        for _ in 0..pairs {
            let a = rng.random_range(0..n);
            let (t1, t2) = (rng.random::<f64>() * tau, rng.random::<f64>() * tau);
            let f1 = describe_with(&self.manifolds[a], t1, 0.0, &mut rng);
            let f2 = describe_with(&self.manifolds[a], t2, 0.0, &mut rng);
            min_intra = min_intra.min(f1.dot(&f2));
            if n > 1 {
                let b = (a + 1 + rng.random_range(0..n - 1)) % n;
                let f3 = describe_with(&self.manifolds[b], t2, 0.0, &mut rng);
                max_inter = max_inter.max(f1.dot(&f3));
            }
        }
        CertificationReport {
            min_intra,
            max_inter,
            pairs,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(k: usize, dim: usize, delta: f64, eta: f64) -> ManifoldSpec {
        ManifoldSpec {
            num_instances: k,
            dim,
            cohesion_delta: delta,
            separation_eta: eta,
            num_view_dirs: 4.min(dim - 1),
        }
    }

    #[test]
    fn two_instances_respect_both_bounds() {
        let set = generate_manifold_set(&spec(2, 64, 0.8, 0.2), 7).unwrap();
        assert_eq!(set.manifolds.len(), 2);
        let mut rng = rng::seeded(99);
        let tau = std::f64::consts::TAU;
        let mut min_intra = f64::INFINITY;
        let mut max_inter = f64::NEG_INFINITY;
        for _ in 0..1000 {
            let (a, b) = (rng.random::<f64>() * tau, rng.random::<f64>() * tau);
            let f0a = describe(&set.manifolds[0], a, 0.0, 0);
            let f0b = describe(&set.manifolds[0], b, 0.0, 0);
            let f1b = describe(&set.manifolds[1], b, 0.0, 0);
            min_intra = min_intra.min(f0a.dot(&f0b));
            max_inter = max_inter.max(f0a.dot(&f1b));
        }
        assert!(min_intra >= 0.8 - 1e-6, "min intra {min_intra}");
        assert!(max_inter <= 0.2 + 1e-6, "max inter {max_inter}");
    }

    #[test]
    fn single_instance_is_cohesive() {
        let set = generate_manifold_set(&spec(1, 8, 0.99, 0.0), 3).unwrap();
        let rep = set.certify(2000, 1);
        assert!(rep.min_intra >= 0.99 - 1e-6);
        assert_eq!(rep.max_inter, f64::NEG_INFINITY);
    }

    #[test]
    fn packing_bound_rejects_crowded_plane() {
        let s = ManifoldSpec {
            num_instances: 100,
            dim: 2,
            cohesion_delta: 0.9,
            separation_eta: 0.0,
            num_view_dirs: 1,
        };
        assert!(matches!(
            generate_manifold_set(&s, 0),
            Err(Error::InfeasibleGeometry(_))
        ));
    }

    #[test]
    fn view_basis_is_orthonormal_and_orthogonal_to_means() {
        let set = generate_manifold_set(&spec(5, 64, 0.8, 0.2), 11).unwrap();
        for m in &set.manifolds {
            assert!(m.mean_direction.is_unit(1e-12));
            for (i, a) in m.view_basis.iter().enumerate() {
                for other in &set.manifolds {
                    assert!(a.dot(&other.mean_direction).abs() < 1e-9);
                }
                for (j, b) in m.view_basis.iter().enumerate() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((a.dot(b) - expect).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn zero_amplitude_collapses_to_mean() {
        let set = generate_manifold_set(&spec(2, 16, 0.8, 0.2), 1).unwrap();
        let mut m = set.manifolds[0].clone();
        m.view_amplitude = 0.0;
        let f = describe(&m, 1.234, 0.0, 5);
        assert!(f.sq_distance(&m.mean_direction) < 1e-30);
    }

    #[test]
    fn quarter_turn_views_stay_cohesive() {
        let set = generate_manifold_set(&spec(2, 64, 0.8, 0.2), 2).unwrap();
        let a = describe(&set.manifolds[0], 0.0, 0.0, 0);
        let b = describe(&set.manifolds[0], std::f64::consts::FRAC_PI_2, 0.0, 0);
        assert!(a.dot(&b) >= 0.8 - 1e-9);
    }

    #[test]
    fn worst_case_cohesion_is_attained() {
        // Antipodal view offsets at maximal length reach delta exactly.
        let set = generate_manifold_set(&spec(1, 16, 0.8, 0.0), 4).unwrap();
        let m = &set.manifolds[0];
        let mut worst: f64 = 1.0;
        for i in 0..3600 {
            let t = i as f64 / 3600.0 * std::f64::consts::TAU;
            let a = describe(m, t, 0.0, 0);
            let b = describe(m, t + std::f64::consts::PI, 0.0, 0);
            worst = worst.min(a.dot(&b));
        }
        assert!((worst - 0.8).abs() < 1e-5, "worst {worst}");
    }

    #[test]
    fn generation_is_deterministic_and_round_trips_through_json() {
        let a = generate_manifold_set(&spec(3, 32, 0.8, 0.2), 5).unwrap();
        let b = generate_manifold_set(&spec(3, 32, 0.8, 0.2), 5).unwrap();
        assert_eq!(a, b);
        let back = ManifoldSet::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(a, back);
        let v: serde_json::Value = serde_json::from_str(&a.to_json().unwrap()).unwrap();
        assert_eq!(v["dim"], 32);
        assert!(v["manifolds"][0]["view_basis"].is_array());
    }
}
