//! Novel-class count estimation with k-means whose labeled points stay
//! pinned to their own clusters.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{GmError, Result};
use crate::kernel::{squared_euclidean, Vec64};
use crate::memory::ExemplarStore;
use crate::metrics::clustering_accuracy;
use crate::model::Encoder;

pub const MAX_ITERATIONS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct SemiKmeans {
    /// Cluster of every free point, in input order.
    pub free: Vec<usize>,
    /// Cluster of every anchored point; cluster `i` belongs to the `i`-th
    /// distinct label in ascending order.
    pub anchored: Vec<usize>,
    pub centroids: Vec<Vec64>,
    pub iterations: usize,
    /// Within-cluster sum of squares after each iteration.
    pub inertia: Vec<f64>,
}

fn nearest(x: &[f64], centroids: &[Vec64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_euclidean(x, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

fn farthest(points: &[&Vec64], centroids: &[Vec64]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d = centroids.iter().map(|c| squared_euclidean(p, c)).fold(f64::INFINITY, f64::min);
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Lloyd iterations over `points` plus `anchored`, with `k_total` clusters.
/// Anchored points never move. Free clusters are seeded by farthest-point
/// selection from the anchored centroids (the first one at random when
/// nothing is anchored); a free cluster that empties is re-seeded at the
/// point farthest from every centroid.
pub fn semi_kmeans(points: &[Vec64], anchored: &[(Vec64, usize)], k_total: usize, seed: u64) -> Result<SemiKmeans> {
    let labels: Vec<usize> = {
        let mut l: Vec<usize> = anchored.iter().map(|(_, y)| *y).collect();
        l.sort_unstable();
        l.dedup();
        l
    };
    if k_total < labels.len() {
        return Err(GmError::AnchorOverflow { k_total, labels: labels.len() });
    }
    if k_total == 0 {
        return Err(GmError::Config("semi_kmeans needs k_total >= 1".into()));
    }
    if points.is_empty() && anchored.is_empty() {
        return Err(GmError::Empty("semi_kmeans input"));
    }
    let slot: BTreeMap<usize, usize> = labels.iter().enumerate().map(|(i, &y)| (y, i)).collect();
    let anchored_assign: Vec<usize> = anchored.iter().map(|(_, y)| slot[y]).collect();
    let all: Vec<&Vec64> = points.iter().chain(anchored.iter().map(|(x, _)| x)).collect();
    let dim = all[0].len();
    if all.iter().any(|x| x.len() != dim) {
        return Err(GmError::Shape("semi_kmeans points differ in dimension".into()));
    }

    let mut centroids: Vec<Vec64> = (0..labels.len())
        .map(|i| {
            let members: Vec<Vec64> =
                anchored.iter().zip(&anchored_assign).filter(|(_, &a)| a == i).map(|((x, _), _)| x.clone()).collect();
            crate::kernel::mean(&members).expect("label has members")
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while centroids.len() < k_total {
        let next = if centroids.is_empty() { rng.random_range(0..all.len()) } else { farthest(&all, &centroids) };
        centroids.push(all[next].clone());
    }

    let mut free: Vec<usize> = points.iter().map(|x| nearest(x, &centroids)).collect();
    let mut inertia = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k_total];
        let mut counts = vec![0usize; k_total];
        let members = points.iter().zip(&free).chain(anchored.iter().map(|(x, _)| x).zip(&anchored_assign));
        for (x, &c) in members {
            counts[c] += 1;
            sums[c].iter_mut().zip(x).for_each(|(s, v)| *s += v);
        }
        for c in 0..k_total {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in labels.len()..k_total {
            if counts[c] == 0 && !points.is_empty() {
                let free_refs: Vec<&Vec64> = points.iter().collect();
                let others: Vec<Vec64> =
                    centroids.iter().enumerate().filter(|&(i, _)| i != c).map(|(_, v)| v.clone()).collect();
                let p = farthest(&free_refs, &others);
                centroids[c] = points[p].clone();
                free[p] = c;
            }
        }
        let wcss = |free: &[usize], centroids: &[Vec64]| -> f64 {
            points.iter().zip(free).map(|(x, &c)| squared_euclidean(x, &centroids[c])).sum::<f64>()
                + anchored
                    .iter()
                    .zip(&anchored_assign)
                    .map(|((x, _), &c)| squared_euclidean(x, &centroids[c]))
                    .sum::<f64>()
        };
        let next: Vec<usize> = points.iter().map(|x| nearest(x, &centroids)).collect();
        let stable = next == free;
        free = next;
        inertia.push(wcss(&free, &centroids));
        if stable || iterations == MAX_ITERATIONS {
            break;
        }
    }
    Ok(SemiKmeans { free, anchored: anchored_assign, centroids, iterations, inertia })
}

/// Default candidate range for the novel-class count.
pub fn default_range(true_count: Option<usize>) -> RangeInclusive<usize> {
    match true_count {
        Some(k) => 1..=2 * k + 2,
        None => 1..=10,
    }
}

/// Exemplar accuracy for each candidate count in `range`: all exemplars
/// are anchored, and each is scored by the cluster whose final centroid is
/// nearest, since the anchored assignment itself is correct by construction.
pub fn exemplar_accuracy_sweep(
    batch: &[Vec64],
    exemplars: &[(Vec64, usize)],
    range: RangeInclusive<usize>,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    let mut labels: Vec<usize> = exemplars.iter().map(|(_, y)| *y).collect();
    labels.sort_unstable();
    labels.dedup();
    let truth: Vec<usize> = exemplars.iter().map(|(_, y)| *y).collect();
    range
        .map(|k| {
            if truth.is_empty() {
                return Ok((k, 0.0));
            }
            let fit = semi_kmeans(batch, exemplars, labels.len() + k, seed)?;
            let pred: Vec<usize> = exemplars.iter().map(|(x, _)| nearest(x, &fit.centroids)).collect();
            Ok((k, clustering_accuracy(&pred, &truth)?))
        })
        .collect()
}

/// Sweeps candidate novel counts and returns the one with the highest
/// exemplar accuracy; ties go to the smallest candidate.
pub fn estimate_novel_count(
    batch_embeddings: &[Vec64],
    store: &ExemplarStore,
    encoder: &Encoder,
    range: RangeInclusive<usize>,
    seed: u64,
) -> Result<usize> {
    if range.is_empty() {
        return Err(GmError::Config("empty candidate range".into()));
    }
    if range.start() == range.end() {
        return Ok(*range.start());
    }
    let mut anchored = Vec::new();
    for (id, class) in store.classes() {
        for e in &class.exemplars {
            anchored.push((encoder.encode(&e.sample)?, id));
        }
    }
    let sweep = exemplar_accuracy_sweep(batch_embeddings, &anchored, range, seed)?;
    let mut best = sweep[0];
    for &(k, acc) in &sweep[1..] {
        if acc > best.1 {
            best = (k, acc);
        }
    }
    log::debug!("count sweep {sweep:?} -> {}", best.0);
    Ok(best.0)
}
