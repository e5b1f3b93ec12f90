//! Merging phase: sift pseudo-labeled samples by local density, turn the
//! surviving clusters into stored classes, tighten the representation with
//! the prototype loss and fold the dynamic branch back toward the static one.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GmError, Result};
use crate::grow::{augment, mean_breakdown, wta_matrix};
use crate::kernel::{squared_euclidean, Vec64};
use crate::memory::{herd_exemplars, prototype_from_embeddings, Exemplar, ExemplarStore};
use crate::model::{backward, ema_merge, BceTerm, BranchPair, Encoder, LossBreakdown, LossContext, LossWeights, OptState, PllTerm};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeConfig {
    /// Rank of the same-class neighbor defining local density.
    pub sift_j: usize,
    /// Fraction of each pseudo-class removed by sifting.
    pub sift_fraction: f64,
    pub tau: f64,
    pub epochs: usize,
    pub alpha: f64,
    pub batch_size: usize,
    pub wta_k: usize,
    /// Keep the consistency loss on while merging.
    pub mse_in_merge: bool,
    pub augment_sigma: f64,
    /// Distill on stored exemplars (default) rather than the stage's novel
    /// samples.
    pub sd_on_exemplars: bool,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            sift_j: 15,
            sift_fraction: 0.5,
            tau: 0.1,
            epochs: 50,
            alpha: 0.99,
            batch_size: 32,
            wta_k: 5,
            mse_in_merge: false,
            augment_sigma: 0.05,
            sd_on_exemplars: true,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sift_j == 0 {
            return Err(GmError::Config("sift_j must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.sift_fraction) {
            return Err(GmError::Config(format!("sift_fraction {} outside [0, 1)", self.sift_fraction)));
        }
        if !(self.tau > 0.0) {
            return Err(GmError::Config(format!("tau {} must be positive", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(GmError::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.batch_size == 0 {
            return Err(GmError::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Distance from each embedding to its `j`-th nearest neighbor within the
/// same list (squared Euclidean). With fewer than `j` neighbors the farthest
/// one is used; a singleton scores zero.
pub fn local_density(embeddings: &[Vec64], j: usize) -> Vec<f64> {
    let n = embeddings.len();
    (0..n)
        .map(|i| {
            let mut d: Vec<f64> =
                (0..n).filter(|&k| k != i).map(|k| squared_euclidean(&embeddings[i], &embeddings[k])).collect();
            if d.is_empty() {
                return 0.0;
            }
            d.sort_by(f64::total_cmp);
            d[j.min(d.len()) - 1]
        })
        .collect()
}

/// Per class, removes the `ceil(fraction * n)` samples with the largest
/// local-density score (ties: highest index first). Returns kept indices in
/// ascending order; a class may come back empty.
pub fn sift_samples(per_class: &[Vec<Vec64>], j: usize, fraction: f64) -> Vec<Vec<usize>> {
    per_class
        .iter()
        .map(|emb| {
            let n = emb.len();
            let remove = ((fraction * n as f64) - 1e-12).ceil().max(0.0) as usize;
            let g = local_density(emb, j.max(1));
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| g[b].total_cmp(&g[a]).then(b.cmp(&a)));
            let mut kept: Vec<usize> = order.into_iter().skip(remove.min(n)).collect();
            kept.sort_unstable();
            kept
        })
        .collect()
}

/// Groups samples by pseudo-label, sifts each group in embedding space and
/// returns the survivors as `(pseudo-label, raw inputs)` in label order.
pub fn sift_pseudo_labeled(
    encoder: &Encoder,
    inputs: &[Vec64],
    pseudo: &[usize],
    cfg: &MergeConfig,
) -> Result<BTreeMap<usize, Vec<Vec64>>> {
    let mut groups: BTreeMap<usize, Vec<Vec64>> = BTreeMap::new();
    for (x, &p) in inputs.iter().zip(pseudo) {
        groups.entry(p).or_default().push(x.clone());
    }
    let labels: Vec<usize> = groups.keys().copied().collect();
    let embeddings: Vec<Vec<Vec64>> = groups.values().map(|g| encoder.encode_all(g)).collect::<Result<_>>()?;
    let kept = sift_samples(&embeddings, cfg.sift_j, cfg.sift_fraction);
    let mut out = BTreeMap::new();
    for (label, keep) in labels.into_iter().zip(kept) {
        if keep.is_empty() {
            log::warn!("pseudo-class {label} emptied by sifting; dropped");
            continue;
        }
        let g = &groups[&label];
        out.insert(label, keep.into_iter().map(|i| g[i].clone()).collect());
    }
    Ok(out)
}

/// Adds each sifted pseudo-class to the store under fresh consecutive ids,
/// with a prototype from the mean sifted embedding and herded exemplars,
/// then rebalances the budget. Returns the map pseudo-label -> class id.
pub fn unify_categories(
    encoder: &Encoder,
    sifted: &BTreeMap<usize, Vec<Vec64>>,
    store: &mut ExemplarStore,
    timestep: usize,
) -> Result<BTreeMap<usize, usize>> {
    if sifted.values().all(Vec::is_empty) {
        return Err(GmError::Empty("sifted novel samples"));
    }
    let classes_after = store.num_classes() + sifted.values().filter(|v| !v.is_empty()).count();
    let quota = (store.budget() / classes_after).max(1);
    let mut mapping = BTreeMap::new();
    for (&pseudo, samples) in sifted {
        if samples.is_empty() {
            continue;
        }
        let id = store.next_class_id();
        let proto = prototype_from_embeddings(id, &encoder.encode_all(samples)?)?;
        let order = herd_exemplars(samples, encoder, quota)?;
        let exemplars = order
            .into_iter()
            .map(|i| Exemplar { sample: samples[i].clone(), label: id, source_timestep: timestep })
            .collect();
        store.insert_class(id, exemplars, proto)?;
        mapping.insert(pseudo, id);
    }
    store.rebalance_budget(encoder)?;
    Ok(mapping)
}

/// Trains with the weighted pairwise, distillation and prototype losses.
/// Prototypes are refreshed from the exemplars at the start of every epoch
/// and held fixed within it.
pub fn run_merging(
    pair: &mut BranchPair,
    store: &mut ExemplarStore,
    novel: &[Vec64],
    cfg: &MergeConfig,
    weights: &LossWeights,
    opt: &mut OptState,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LossBreakdown>> {
    cfg.validate()?;
    if store.is_empty() {
        return Err(GmError::EmptyStore);
    }
    let mut weights = *weights;
    if !cfg.mse_in_merge {
        weights.mse = 0.0;
    }
    let ids = store.class_ids();
    let exemplars: Vec<Vec<Vec64>> = ids.iter().map(|&id| store.exemplar_inputs(id)).collect();
    let all_exemplars: Vec<Vec64> = exemplars.iter().flatten().cloned().collect();
    let mut order: Vec<usize> = (0..novel.len()).collect();
    let steps = novel.len().div_ceil(cfg.batch_size).max(1);

    let mut log = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        store.refresh_prototypes(&pair.dynamic_branch)?;
        let prototypes: Vec<Vec64> = ids
            .iter()
            .map(|id| store.class(*id).and_then(|c| c.prototype.as_ref()).map(|p| p.mu.clone()).expect("refreshed"))
            .collect();
        order.shuffle(rng);
        let embeddings = pair.dynamic_branch.encode_all(novel)?;
        let mut parts = Vec::with_capacity(steps);
        for step in 0..steps {
            let chunk = order.get(step * cfg.batch_size..((step + 1) * cfg.batch_size).min(order.len())).unwrap_or(&[]);
            let inputs: Vec<Vec64> = chunk.iter().map(|&i| novel[i].clone()).collect();
            let bce = (!inputs.is_empty()).then(|| BceTerm {
                similarity: wta_matrix(&chunk.iter().map(|&i| embeddings[i].clone()).collect::<Vec<_>>(), cfg.wta_k),
                inputs: inputs.clone(),
            });
            let sd_inputs = if cfg.sd_on_exemplars { all_exemplars.clone() } else { inputs.clone() };
            let mse_pairs = if cfg.mse_in_merge {
                inputs.iter().map(|x| (x.clone(), augment(x, cfg.augment_sigma, rng))).collect()
            } else {
                Vec::new()
            };
            let ctx = LossContext {
                bce,
                sd_inputs,
                pll: Some(PllTerm { exemplars: exemplars.clone(), prototypes: prototypes.clone(), tau: cfg.tau }),
                mse_pairs,
            };
            let (loss, grads) = backward(pair, &ctx, &weights)?;
            opt.step(&mut pair.dynamic_branch, &mut pair.head, &grads)?;
            parts.push(loss);
        }
        opt.end_epoch();
        log.push(mean_breakdown(&parts));
    }
    store.refresh_prototypes(&pair.dynamic_branch)?;
    Ok(log)
}

/// Folds the dynamic branch toward the static one:
/// `dynamic <- alpha * static + (1 - alpha) * dynamic`.
pub fn unify_branches(pair: &mut BranchPair, alpha: f64) -> Result<()> {
    pair.dynamic_branch = ema_merge(&pair.static_branch, &pair.dynamic_branch, alpha)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sift_examples() {
        let identical = vec![vec![vec![1.0, 1.0]; 4]];
        let kept = sift_samples(&identical, 2, 0.5);
        assert_eq!(kept, vec![vec![0, 1]]);

        let line = vec![vec![vec![0.0], vec![0.1], vec![0.2], vec![10.0]]];
        let g = local_density(&line[0], 1);
        assert!(g[3] > 9.0 && g[0] < 0.02);
        assert_eq!(sift_samples(&line, 1, 0.5), vec![vec![0, 1]]);

        assert_eq!(sift_samples(&line, 1, 0.0), vec![vec![0, 1, 2, 3]]);
    }

    #[test]
    fn sift_clamps_j_for_small_classes() {
        let pts = vec![vec![0.0], vec![1.0], vec![3.0]];
        // j = 15 > n - 1, so each point uses its farthest neighbor
        assert_eq!(local_density(&pts, 15), vec![9.0, 4.0, 9.0]);
        assert_eq!(local_density(&[vec![1.0]], 3), vec![0.0]);
        assert_eq!(sift_samples(&[vec![vec![1.0]]], 3, 0.5), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn unify_branches_alpha_zero_keeps_dynamic() {
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
        let a = Encoder::random(&[2, 3, 2], &mut rng).unwrap();
        let b = Encoder::random(&[2, 3, 2], &mut rng).unwrap();
        let mut pair = BranchPair { static_branch: a, dynamic_branch: b.clone(), head: crate::model::ClusterHead::zeros(2, 1) };
        unify_branches(&mut pair, 0.0).unwrap();
        assert_eq!(pair.dynamic_branch, b);
    }
}
