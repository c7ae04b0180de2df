//! Monte-Carlo harness for the prototype separation results.
//!
//! All expectations over a manifold are estimated with one probe set per
//! instance, shared by both sides of every inequality, so sampling noise
//! cannot flip a comparison on its own.

use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use super::manifold::{describe_with, generate_manifold_set, InstanceManifold, ManifoldSet, ManifoldSpec};
use super::prototype::init_prototype;
use super::vector::{self, FeatureVector};
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Absolute tolerance for every certification comparison.
pub const TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoverageReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Noise-free probe features at uniformly random view angles.
pub fn sample_probes(manifold: &InstanceManifold, count: usize, rng: &mut Rng) -> Vec<FeatureVector> {
    (0..count)
        .map(|_| {
            let t = rng.random::<f64>() * std::f64::consts::TAU;
            describe_with(manifold, t, 0.0, rng)
        })
        .collect()
}

/// `N` views at evenly spaced angles starting from `start`.
pub fn view_sweep(manifold: &InstanceManifold, start: f64, n_views: usize) -> Vec<FeatureVector> {
    let mut rng = rng::seeded(0);
    (0..n_views)
        .map(|i| {
            let t = start + std::f64::consts::TAU * i as f64 / n_views as f64;
            describe_with(manifold, t, 0.0, &mut rng)
        })
        .collect()
}

fn mean_sq_distance(a: &FeatureVector, probes: &[FeatureVector]) -> f64 {
    probes.iter().map(|g| a.sq_distance(g)).sum::<f64>() / probes.len() as f64
}

fn coverage_on(ref_feature: &FeatureVector, augmented: &[FeatureVector], probes: &[FeatureVector]) -> CoverageReport {
    let lhs = augmented
        .iter()
        .map(|f| mean_sq_distance(f, probes))
        .sum::<f64>()
        / augmented.len() as f64;
    let rhs = mean_sq_distance(ref_feature, probes);
    CoverageReport {
        lhs,
        rhs,
        holds: lhs <= rhs + TOLERANCE,
    }
}

/// Checks that the augmented views are, on average, at least as close to the
/// manifold as the reference.
pub fn verify_coverage_assumption(
    manifold: &InstanceManifold,
    ref_feature: &FeatureVector,
    augmented: &[FeatureVector],
    probe_count: usize,
    seed: u64,
) -> Result<CoverageReport> {
    if probe_count == 0 {
        return Err(Error::InvalidArgument("probe_count must be >= 1".into()));
    }
    if augmented.is_empty() {
        return Err(Error::InvalidArgument("augmented set is empty".into()));
    }
    let probes = sample_probes(manifold, probe_count, &mut rng::seeded(seed));
    Ok(coverage_on(ref_feature, augmented, &probes))
}

/// Smallest slack (`rhs - lhs`, or `lhs - rhs` for the separation bound)
/// observed for each inequality; negative means violated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryMargins {
    pub jensen: f64,
    pub lemma1: f64,
    pub lemma2: f64,
    pub prop1: f64,
    /// Minimum squared distance between reference features of distinct instances.
    pub ref_min_sq_distance: f64,
    /// Minimum squared distance between prototypes of distinct instances.
    pub proto_min_sq_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryReport {
    pub lemma1_holds: bool,
    pub lemma2_holds: bool,
    pub prop1_holds: bool,
    /// Fraction of references for which the coverage assumption held. This is
    /// a hypothesis of the results, reported rather than required.
    pub coverage_rate: f64,
    pub margins: TheoryMargins,
}

#[derive(Debug, Clone, Copy)]
pub struct TheoryParams {
    pub n_per_instance: usize,
    pub n_views: usize,
    pub probe_count: usize,
    pub certify_pairs: usize,
    /// Use `[reference]` as the augmented set instead of a view sweep.
    pub identity_augmentation: bool,
}

impl Default for TheoryParams {
    fn default() -> Self {
        Self {
            n_per_instance: 20,
            n_views: 8,
            probe_count: 256,
            certify_pairs: 2000,
            identity_augmentation: false,
        }
    }
}

pub fn verify_lemmas_and_proposition(
    set: &ManifoldSet,
    n_per_instance: usize,
    n_views: usize,
    seed: u64,
) -> Result<TheoryReport> {
    verify_with(
        set,
        &TheoryParams {
            n_per_instance,
            n_views,
            ..TheoryParams::default()
        },
        seed,
    )
}

struct InstanceResult {
    references: Vec<FeatureVector>,
    prototypes: Vec<FeatureVector>,
    jensen: f64,
    lemma1: f64,
    lemma2: f64,
    covered: usize,
}

fn evaluate_instance(m: &InstanceManifold, params: &TheoryParams, rng: &mut Rng) -> Result<InstanceResult> {
    let probes = sample_probes(m, params.probe_count, rng);
    let mut out = InstanceResult {
        references: Vec::with_capacity(params.n_per_instance),
        prototypes: Vec::with_capacity(params.n_per_instance),
        jensen: f64::INFINITY,
        lemma1: f64::INFINITY,
        lemma2: f64::INFINITY,
        covered: 0,
    };
    for _ in 0..params.n_per_instance {
        let t = rng.random::<f64>() * std::f64::consts::TAU;
        let reference = describe_with(m, t, 0.0, rng);
        let augmented = if params.identity_augmentation {
            vec![reference.clone()]
        } else {
            view_sweep(m, t, params.n_views)
        };
        let f_avg = vector::mean(&augmented)?;
        let proto = init_prototype(&reference, &augmented)?;

        let cov = coverage_on(&reference, &augmented, &probes);
        out.covered += cov.holds as usize;
        let avg_dist = mean_sq_distance(&f_avg, &probes);
        let proto_dist = mean_sq_distance(&proto.vector, &probes);
        out.jensen = out.jensen.min(cov.lhs - avg_dist);
        out.lemma1 = out.lemma1.min(cov.rhs - avg_dist);
        out.lemma2 = out.lemma2.min(cov.rhs - proto_dist);

        out.references.push(reference);
        out.prototypes.push(proto.vector);
    }
    Ok(out)
}

fn min_cross_sq_distance(groups: &[&[FeatureVector]]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in groups.iter().enumerate() {
        for b in &groups[i + 1..] {
            for x in a.iter() {
                for y in b.iter() {
                    best = best.min(x.sq_distance(y));
                }
            }
        }
    }
    best
}

/// Samples `n_per_instance` references per instance, augments each with a
/// uniform view sweep, builds prototypes and evaluates Lemma 1, Lemma 2 and
/// the minimum-distance proposition.
pub fn verify_with(set: &ManifoldSet, params: &TheoryParams, seed: u64) -> Result<TheoryReport> {
    if params.n_per_instance == 0 || params.n_views == 0 || params.probe_count == 0 {
        return Err(Error::InvalidArgument(
            "n_per_instance, n_views and probe_count must be >= 1".into(),
        ));
    }
    if set.manifolds.is_empty() {
        return Err(Error::InvalidArgument("empty manifold set".into()));
    }
    let cert = set.certify(params.certify_pairs, rng::derive_seed(seed, &[0xce27]));
    if !cert.holds(set.cohesion_delta(), set.separation_eta, TOLERANCE) {
        return Err(Error::AssumptionViolated(format!(
            "set fails certification: min intra {:.6}, max inter {:.6}",
            cert.min_intra, cert.max_inter
        )));
    }
    let results = set
        .manifolds
        .iter()
        .enumerate()
        .map(|(k, m)| evaluate_instance(m, params, &mut rng::child(seed, &[k as u64])))
        .collect::<Result<Vec<_>>>()?;

    let fold = |f: fn(&InstanceResult) -> f64| results.iter().map(f).fold(f64::INFINITY, f64::min);
    let jensen = fold(|r| r.jensen);
    let lemma1 = fold(|r| r.lemma1);
    let lemma2 = fold(|r| r.lemma2);
    let covered: usize = results.iter().map(|r| r.covered).sum();

    let refs: Vec<&[FeatureVector]> = results.iter().map(|r| r.references.as_slice()).collect();
    let protos: Vec<&[FeatureVector]> = results.iter().map(|r| r.prototypes.as_slice()).collect();
    let (ref_min, proto_min, prop1) = if results.len() < 2 {
        (f64::INFINITY, f64::INFINITY, f64::INFINITY)
    } else {
        let r = min_cross_sq_distance(&refs);
        let p = min_cross_sq_distance(&protos);
        (r, p, p - r)
    };

    Ok(TheoryReport {
        lemma1_holds: lemma1 >= -TOLERANCE,
        lemma2_holds: lemma2 >= -TOLERANCE,
        prop1_holds: prop1 >= -TOLERANCE,
        coverage_rate: covered as f64 / (results.len() * params.n_per_instance) as f64,
        margins: TheoryMargins {
            jensen,
            lemma1,
            lemma2,
            prop1,
            ref_min_sq_distance: ref_min,
            proto_min_sq_distance: proto_min,
        },
    })
}

/// One independent Monte-Carlo trial: a fresh manifold set and its report,
/// or the reason the set could not be built or certified.
#[derive(Debug, Clone, Serialize)]
pub struct Trial {
    pub trial: usize,
    pub seed: u64,
    pub report: Option<TheoryReport>,
    pub error: Option<String>,
}

impl Trial {
    pub fn all_hold(&self) -> bool {
        self.report.is_some_and(|r| r.lemma1_holds && r.lemma2_holds && r.prop1_holds)
    }
}

/// Runs `trials` seeded trials in parallel, returned in trial order.
pub fn run_trials(spec: &ManifoldSpec, params: &TheoryParams, trials: usize, seed: u64) -> Vec<Trial> {
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let s = rng::derive_seed(seed, &[0x7e0, i as u64]);
            let result = generate_manifold_set(spec, s).and_then(|set| verify_with(&set, params, s));
            let (report, error) = match result {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            Trial {
                trial: i,
                seed: s,
                report,
                error,
            }
        })
        .collect()
}
