//! Growing phase: split a stage into novel and known samples, then train the
//! dynamic branch and cluster head on the novel part.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{GmError, Result};
use crate::kernel::Vec64;
use crate::memory::ExemplarStore;
use crate::model::{backward, BceTerm, BranchPair, Encoder, LossBreakdown, LossContext, LossWeights, OptState};
use crate::scenario::Sample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrowConfig {
    /// Novelty threshold, in units of the store's metric.
    pub epsilon: f64,
    pub wta_k: usize,
    pub epochs: usize,
    /// Std of the additive Gaussian noise producing consistency pairs.
    pub augment_sigma: f64,
    pub batch_size: usize,
}

impl Default for GrowConfig {
    fn default() -> Self {
        Self { epsilon: 0.6, wta_k: 5, epochs: 50, augment_sigma: 0.05, batch_size: 32 }
    }
}

impl GrowConfig {
    pub fn validate(&self, embedding_dim: usize) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return Err(GmError::Config(format!("epsilon {} must be >= 0", self.epsilon)));
        }
        if self.wta_k == 0 || self.wta_k > embedding_dim {
            return Err(GmError::Config(format!("wta_k {} outside 1..={embedding_dim}", self.wta_k)));
        }
        if self.batch_size == 0 || !(self.augment_sigma >= 0.0) {
            return Err(GmError::Config("batch_size must be >= 1 and augment_sigma >= 0".into()));
        }
        Ok(())
    }
}

/// Splits `samples` by their distance to the nearest prototype: strictly
/// above `epsilon` is novel. Prototypes are used as stored, so refresh them
/// first if the encoder changed.
pub fn detect_novelty(
    samples: &[Sample],
    store: &ExemplarStore,
    dynamic: &Encoder,
    epsilon: f64,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let mut novel = Vec::new();
    let mut known = Vec::new();
    for s in samples {
        let (_, d) = store.nearest(&dynamic.encode(&s.x)?)?;
        if d > epsilon {
            novel.push(s.clone());
        } else {
            known.push(s.clone());
        }
    }
    Ok((novel, known))
}

/// Indices of the `k` largest entries, ties broken toward the lower index,
/// returned sorted.
pub fn top_k_indices(z: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..z.len()).collect();
    idx.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// 1 when both vectors have the same set of top-`k` channels.
pub fn wta_similarity(z_i: &[f64], z_j: &[f64], k: usize) -> u8 {
    (top_k_indices(z_i, k) == top_k_indices(z_j, k)) as u8
}

/// Row-major WTA similarity matrix over a set of embeddings.
pub fn wta_matrix(embeddings: &[Vec64], k: usize) -> Vec<u8> {
    let keys: Vec<Vec<usize>> = embeddings.iter().map(|z| top_k_indices(z, k)).collect();
    let n = keys.len();
    let mut s = vec![0u8; n * n];
    for i in 0..n {
        for j in 0..n {
            s[i * n + j] = (keys[i] == keys[j]) as u8;
        }
    }
    s
}

pub(crate) fn augment(x: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec64 {
    if sigma == 0.0 {
        return x.to_vec();
    }
    let noise = Normal::new(0.0, sigma).expect("finite sigma");
    x.iter().map(|v| v + noise.sample(rng)).collect()
}

pub(crate) fn mean_breakdown(parts: &[LossBreakdown]) -> LossBreakdown {
    let n = parts.len().max(1) as f64;
    let mut m = LossBreakdown::default();
    for p in parts {
        m.bce += p.bce / n;
        m.sd += p.sd / n;
        m.pll += p.pll / n;
        m.mse += p.mse / n;
        m.total += p.total / n;
    }
    m
}

/// Trains the dynamic branch and head on the novel samples with the
/// weighted pairwise, distillation and consistency losses. The head must
/// already be sized for this stage. Returns the mean loss of every epoch,
/// measured before each minibatch update.
pub fn run_growing(
    pair: &mut BranchPair,
    novel: &[Vec64],
    cfg: &GrowConfig,
    weights: &LossWeights,
    opt: &mut OptState,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LossBreakdown>> {
    if novel.len() < 2 {
        return Err(GmError::TooFewNovel { found: novel.len() });
    }
    cfg.validate(pair.dynamic_branch.output_dim())?;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..novel.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let embeddings = pair.dynamic_branch.encode_all(novel)?;
        let mut parts = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            let ctx = growing_context(novel, &embeddings, chunk, cfg, rng);
            let (loss, grads) = backward(pair, &ctx, weights)?;
            opt.step(&mut pair.dynamic_branch, &mut pair.head, &grads)?;
            parts.push(loss);
        }
        opt.end_epoch();
        log.push(mean_breakdown(&parts));
    }
    Ok(log)
}

fn growing_context(
    novel: &[Vec64],
    embeddings: &[Vec64],
    chunk: &[usize],
    cfg: &GrowConfig,
    rng: &mut ChaCha8Rng,
) -> LossContext {
    let inputs: Vec<Vec64> = chunk.iter().map(|&i| novel[i].clone()).collect();
    let chunk_embeddings: Vec<Vec64> = chunk.iter().map(|&i| embeddings[i].clone()).collect();
    let similarity = wta_matrix(&chunk_embeddings, cfg.wta_k);
    let mse_pairs = inputs.iter().map(|x| (x.clone(), augment(x, cfg.augment_sigma, rng))).collect();
    LossContext {
        bce: Some(BceTerm { inputs: inputs.clone(), similarity }),
        sd_inputs: inputs,
        pll: None,
        mse_pairs,
    }
}
