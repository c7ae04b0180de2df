//! Instance features, prototypes and the separation theory harness.

mod manifold;
mod prototype;
pub mod theory;
mod vector;

pub use manifold::{
    describe, describe_with, generate_manifold_set, mean_cosine, view_radius,
    CertificationReport, InstanceManifold, ManifoldSet, ManifoldSpec,
};
pub use prototype::{
    average_update, best_candidate, cosine_similarity, ema_update, init_prototype,
    match_candidates, EnhancementWorker, Prototype, PrototypeStore,
};
pub use theory::{verify_coverage_assumption, verify_lemmas_and_proposition};
pub use vector::{mean, FeatureVector};
