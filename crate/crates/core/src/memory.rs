//! Exemplar memory: herding selection, prototypes, the nearest-prototype
//! classifier and the fixed memory budget.
//!
//! Exemplars keep raw inputs so that prototypes can be recomputed whenever
//! the encoder changes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{GmError, Result};
use crate::kernel::{dot, l2_normalize, mean, norm, squared_euclidean, Metric, Vec64, NORM_FLOOR};
use crate::model::Encoder;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub sample: Vec64,
    pub label: usize,
    pub source_timestep: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub class_id: usize,
    pub mu: Vec64,
    pub support: usize,
}

impl Prototype {
    /// A prototype whose mean embedding vanished and could not be normalized.
    pub fn is_degenerate(&self) -> bool {
        norm(&self.mu) < NORM_FLOOR
    }
}

/// Greedy herding toward `target`: at step `i` picks the unused candidate
/// that keeps the running mean of the picked embeddings closest to the
/// target. Returns candidate indices in selection order; ties go to the
/// lowest index.
pub fn herd_toward(embeddings: &[Vec64], target: &[f64], m: usize) -> Vec<usize> {
    let n = embeddings.len();
    let dim = target.len();
    let mut chosen = Vec::with_capacity(m.min(n));
    let mut used = vec![false; n];
    let mut running = vec![0.0; dim];
    let mut candidate = vec![0.0; dim];
    for step in 1..=m.min(n) {
        let inv = 1.0 / step as f64;
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in embeddings.iter().enumerate() {
            if used[i] {
                continue;
            }
            for d in 0..dim {
                candidate[d] = (running[d] + e[d]) * inv;
            }
            let dist = squared_euclidean(target, &candidate);
            if best.is_none_or(|(_, b)| dist < b) {
                best = Some((i, dist));
            }
        }
        let (pick, _) = best.expect("unused candidate remains");
        used[pick] = true;
        for (r, e) in running.iter_mut().zip(&embeddings[pick]) {
            *r += e;
        }
        chosen.push(pick);
    }
    chosen
}

/// Herding over the encoder embeddings of one class, toward their mean.
/// Returns indices into `samples` in priority order.
pub fn herd_exemplars(samples: &[Vec64], encoder: &Encoder, m: usize) -> Result<Vec<usize>> {
    if samples.is_empty() {
        return Err(GmError::Empty("herding candidate list"));
    }
    let embeddings = encoder.encode_all(samples)?;
    let target = mean(&embeddings).expect("nonempty");
    Ok(herd_toward(&embeddings, &target, m))
}

/// Normalized mean embedding of the exemplars. A vanishing mean is passed
/// through unnormalized and reported by [`Prototype::is_degenerate`].
pub fn compute_prototype(class_id: usize, samples: &[Vec64], encoder: &Encoder) -> Result<Prototype> {
    if samples.is_empty() {
        return Err(GmError::Empty("exemplar list"));
    }
    prototype_from_embeddings(class_id, &encoder.encode_all(samples)?)
}

pub fn prototype_from_embeddings(class_id: usize, embeddings: &[Vec64]) -> Result<Prototype> {
    let m = mean(embeddings).ok_or(GmError::Empty("embedding list"))?;
    Ok(Prototype { class_id, mu: l2_normalize(&m), support: embeddings.len() })
}

/// Distance between an embedding and a prototype. Cosine distance is taken
/// between normalized directions; a zero vector is at distance 1 from
/// everything.
pub fn embedding_distance(z: &[f64], mu: &[f64], metric: Metric) -> f64 {
    match metric {
        Metric::SquaredEuclidean => squared_euclidean(z, mu),
        Metric::Cosine => 1.0 - dot(&l2_normalize(z), &l2_normalize(mu)).clamp(-1.0, 1.0),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMemory {
    /// Exemplars in herding priority order.
    pub exemplars: Vec<Exemplar>,
    pub prototype: Option<Prototype>,
}

/// Per-class exemplars and prototypes under a global exemplar budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExemplarStore {
    classes: BTreeMap<usize, ClassMemory>,
    budget: usize,
    metric: Metric,
}

impl ExemplarStore {
    pub fn new(budget: usize, metric: Metric) -> Result<Self> {
        if budget == 0 {
            return Err(GmError::Config("exemplar budget must be positive".into()));
        }
        Ok(Self { classes: BTreeMap::new(), budget, metric })
    }

    /// Rebuilds a store from saved per-class state, prototypes included.
    pub fn from_classes(budget: usize, metric: Metric, classes: BTreeMap<usize, ClassMemory>) -> Result<Self> {
        let mut store = Self::new(budget, metric)?;
        store.classes = classes;
        Ok(store)
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_ids(&self) -> Vec<usize> {
        self.classes.keys().copied().collect()
    }

    /// Smallest id not yet used by any class.
    pub fn next_class_id(&self) -> usize {
        self.classes.keys().next_back().map_or(0, |k| k + 1)
    }

    pub fn class(&self, id: usize) -> Option<&ClassMemory> {
        self.classes.get(&id)
    }

    pub fn classes(&self) -> impl Iterator<Item = (usize, &ClassMemory)> {
        self.classes.iter().map(|(k, v)| (*k, v))
    }

    pub fn total_exemplars(&self) -> usize {
        self.classes.values().map(|c| c.exemplars.len()).sum()
    }

    /// Replaces a class's exemplars (given in priority order) and prototype.
    pub fn insert_class(&mut self, id: usize, exemplars: Vec<Exemplar>, prototype: Prototype) -> Result<()> {
        if exemplars.is_empty() {
            return Err(GmError::Empty("class exemplar list"));
        }
        if prototype.class_id != id {
            return Err(GmError::Shape(format!("prototype for class {} stored under {id}", prototype.class_id)));
        }
        self.classes.insert(id, ClassMemory { exemplars, prototype: Some(prototype) });
        Ok(())
    }

    /// Herds `m` exemplars out of `samples` with `encoder` and stores them
    /// with a prototype computed from the chosen exemplars.
    pub fn build_class(&mut self, id: usize, samples: &[Vec64], encoder: &Encoder, m: usize, timestep: usize) -> Result<()> {
        let order = herd_exemplars(samples, encoder, m)?;
        let exemplars: Vec<Exemplar> = order
            .iter()
            .map(|&i| Exemplar { sample: samples[i].clone(), label: id, source_timestep: timestep })
            .collect();
        let raw: Vec<Vec64> = exemplars.iter().map(|e| e.sample.clone()).collect();
        let proto = compute_prototype(id, &raw, encoder)?;
        self.insert_class(id, exemplars, proto)
    }

    pub fn exemplar_inputs(&self, id: usize) -> Vec<Vec64> {
        self.classes.get(&id).map(|c| c.exemplars.iter().map(|e| e.sample.clone()).collect()).unwrap_or_default()
    }

    /// Recomputes every prototype from its raw exemplars with `encoder`.
    pub fn refresh_prototypes(&mut self, encoder: &Encoder) -> Result<()> {
        for (&id, class) in self.classes.iter_mut() {
            let raw: Vec<Vec64> = class.exemplars.iter().map(|e| e.sample.clone()).collect();
            class.prototype = Some(compute_prototype(id, &raw, encoder)?);
        }
        Ok(())
    }

    /// Class ids whose current prototype is degenerate.
    pub fn degenerate_classes(&self) -> Vec<usize> {
        self.classes
            .iter()
            .filter(|(_, c)| c.prototype.as_ref().is_some_and(Prototype::is_degenerate))
            .map(|(k, _)| *k)
            .collect()
    }

    /// Usable prototypes in ascending class order.
    pub fn prototypes(&self) -> Vec<&Prototype> {
        self.classes
            .values()
            .filter_map(|c| c.prototype.as_ref())
            .filter(|p| !p.is_degenerate())
            .collect()
    }

    /// Nearest prototype to an embedding: `(class id, distance)`.
    pub fn nearest(&self, z: &[f64]) -> Result<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for p in self.prototypes() {
            let d = embedding_distance(z, &p.mu, self.metric);
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((p.class_id, d));
            }
        }
        best.ok_or(GmError::EmptyStore)
    }

    pub fn classify(&self, encoder: &Encoder, x: &[f64]) -> Result<usize> {
        Ok(self.nearest(&encoder.encode(x)?)?.0)
    }

    /// Truncates every class to `floor(budget / classes)` exemplars, keeping
    /// herding priority order, then refreshes prototypes.
    pub fn rebalance_budget(&mut self, encoder: &Encoder) -> Result<()> {
        if self.classes.is_empty() {
            return Ok(());
        }
        let quota = self.budget / self.classes.len();
        if quota == 0 {
            return Err(GmError::Config(format!(
                "budget {} cannot hold one exemplar for each of {} classes",
                self.budget,
                self.classes.len()
            )));
        }
        for class in self.classes.values_mut() {
            class.exemplars.truncate(quota);
        }
        self.refresh_prototypes(encoder)
    }

    /// Drops a class entirely.
    pub fn remove_class(&mut self, id: usize) -> Option<ClassMemory> {
        self.classes.remove(&id)
    }
}

/// [`ExemplarStore::classify`] as a free function.
pub fn classify_nearest_prototype(store: &ExemplarStore, encoder: &Encoder, x: &[f64]) -> Result<usize> {
    store.classify(encoder, x)
}
