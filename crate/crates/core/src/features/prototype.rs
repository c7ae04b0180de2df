//! Target prototype: initialisation from a reference plus augmented views,
//! cosine matching against candidates, and online enhancement.

use std::sync::mpsc;
use std::sync::{Arc, RwLock};
use std::thread;

use serde::{Deserialize, Serialize};

use super::vector::{self, FeatureVector};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub vector: FeatureVector,
    pub source_instance: Option<u32>,
    pub update_count: u64,
}

impl Prototype {
    pub fn with_source(mut self, instance: u32) -> Self {
        self.source_instance = Some(instance);
        self
    }
}

/// `normalize(f_ref + mean(augmented))`.
pub fn init_prototype(
    ref_feature: &FeatureVector,
    augmented_features: &[FeatureVector],
) -> Result<Prototype> {
    if augmented_features.is_empty() {
        return Err(Error::InvalidArgument(
            "prototype needs at least one augmented view".into(),
        ));
    }
    let avg = vector::mean(augmented_features)?;
    avg.check_dim(ref_feature.dim())?;
    let mut sum = ref_feature.clone();
    sum.axpy(1.0, &avg);
    let norm = sum.norm();
    if norm < 1e-12 {
        return Err(Error::DegenerateSum(norm));
    }
    Ok(Prototype {
        vector: sum.scaled(1.0 / norm),
        source_instance: None,
        update_count: 0,
    })
}

pub fn cosine_similarity(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    b.check_dim(a.dim())?;
    let (na, nb) = (a.norm(), b.norm());
    if na < 1e-12 || nb < 1e-12 {
        return Err(Error::ZeroVector);
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Index and similarity of the best candidate, whatever its score.
/// Zero-length or mismatched candidates are skipped; ties keep the lowest index.
pub fn best_candidate(prototype: &Prototype, candidates: &[FeatureVector]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let Ok(s) = cosine_similarity(&prototype.vector, c) else {
            continue;
        };
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best
}

/// Detection by prototype matching: the arg-max candidate if its similarity
/// strictly exceeds `eta_s`.
pub fn match_candidates(
    prototype: &Prototype,
    candidates: &[FeatureVector],
    eta_s: f64,
) -> Option<usize> {
    best_candidate(prototype, candidates)
        .filter(|&(_, s)| s > eta_s)
        .map(|(i, _)| i)
}

/// `beta * old + (1 - beta) * target`, without renormalisation.
pub fn ema_update(prototype: &Prototype, target_feature: &FeatureVector, beta: f64) -> Prototype {
    let vector = if beta == 1.0 {
        prototype.vector.clone()
    } else {
        let mut v = prototype.vector.scaled(beta);
        v.axpy(1.0 - beta, target_feature);
        v
    };
    Prototype {
        vector,
        source_instance: prototype.source_instance,
        update_count: prototype.update_count + 1,
    }
}

/// Running-mean enhancement: every accepted feature (and the initial
/// prototype) gets equal weight.
pub fn average_update(prototype: &Prototype, target_feature: &FeatureVector) -> Prototype {
    let n = (prototype.update_count + 1) as f64;
    let mut v = prototype.vector.scaled(n / (n + 1.0));
    v.axpy(1.0 / (n + 1.0), target_feature);
    Prototype {
        vector: v,
        source_instance: prototype.source_instance,
        update_count: prototype.update_count + 1,
    }
}

/// Prototype shared between the control loop and an enhancement thread.
///
/// Writers build a complete new prototype and swap the pointer; readers clone
/// the `Arc`, so a reader holds a consistent snapshot for as long as it wants.
#[derive(Debug, Clone)]
pub struct PrototypeStore {
    current: Arc<RwLock<Arc<Prototype>>>,
}

impl PrototypeStore {
    pub fn new(prototype: Prototype) -> Self {
        Self {
            current: Arc::new(RwLock::new(Arc::new(prototype))),
        }
    }

    pub fn load(&self) -> Arc<Prototype> {
        self.current.read().expect("prototype lock poisoned").clone()
    }

    pub fn store(&self, prototype: Prototype) {
        *self.current.write().expect("prototype lock poisoned") = Arc::new(prototype);
    }

    /// Read-modify-write under the write lock, so concurrent updates never
    /// lose each other.
    pub fn update(&self, f: impl FnOnce(&Prototype) -> Prototype) {
        let mut guard = self.current.write().expect("prototype lock poisoned");
        let next = f(&guard);
        *guard = Arc::new(next);
    }
}

/// Background thread applying EMA updates to a [`PrototypeStore`].
pub struct EnhancementWorker {
    tx: Option<mpsc::Sender<FeatureVector>>,
    handle: Option<thread::JoinHandle<()>>,
}

impl EnhancementWorker {
    pub fn spawn(store: PrototypeStore, beta: f64) -> Self {
        let (tx, rx) = mpsc::channel::<FeatureVector>();
        let handle = thread::spawn(move || {
            for feature in rx {
                store.update(|p| ema_update(p, &feature, beta));
            }
        });
        Self {
            tx: Some(tx),
            handle: Some(handle),
        }
    }

    pub fn submit(&self, feature: FeatureVector) {
        if let Some(tx) = &self.tx {
            // The receiver only goes away on shutdown.
            let _ = tx.send(feature);
        }
    }

    /// Drains pending updates and joins the thread.
    pub fn finish(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.tx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for EnhancementWorker {
    fn drop(&mut self) {
        self.shutdown();
    }
}
