//! Finite-difference verification of every loss on random small models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::kernel::{l2_normalize, Vec64};
use crate::model::{gradient_check, BceTerm, BranchPair, ClusterHead, Encoder, LossContext, LossWeights, PllTerm};

/// Largest relative error accepted by [`run_suite`].
pub const TOLERANCE: f64 = 1e-4;

pub const TERMS: [&str; 5] = ["bce", "sd", "pll", "mse", "weighted"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TermReport {
    pub term: &'static str,
    pub models: usize,
    pub worst_relative_error: f64,
}

impl TermReport {
    pub fn passed(&self) -> bool {
        self.worst_relative_error < TOLERANCE
    }
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec64 {
    (0..d).map(|_| rng.random_range(-1.5..1.5)).collect()
}

/// Random model with a few inputs, hidden units, outputs and clusters; the
/// dynamic branch and head are perturbed away from the static copy.
pub fn random_pair(rng: &mut ChaCha8Rng) -> Result<BranchPair> {
    let d_in = rng.random_range(2..5);
    let hidden = rng.random_range(3..7);
    let out = rng.random_range(2..5);
    let k = rng.random_range(2..4);
    let enc = Encoder::random(&[d_in, hidden, out], rng)?;
    let mut pair = BranchPair::from_pretrained(enc, ClusterHead::random(out, k, rng)?)?;
    for s in pair.dynamic_branch.param_slices_mut() {
        s.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    for s in pair.head.param_slices_mut() {
        s.iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
    }
    Ok(pair)
}

/// Random batch exercising every loss term for `pair`.
pub fn random_context(rng: &mut ChaCha8Rng, pair: &BranchPair) -> LossContext {
    let d = pair.dynamic_branch.input_dim();
    let n = 4;
    let inputs: Vec<Vec64> = (0..n).map(|_| random_vec(rng, d)).collect();
    let mut similarity = vec![0u8; n * n];
    for i in 0..n {
        similarity[i * n + i] = 1;
        for j in i + 1..n {
            let s = rng.random_bool(0.5) as u8;
            similarity[i * n + j] = s;
            similarity[j * n + i] = s;
        }
    }
    let classes = rng.random_range(1..4);
    let exemplars: Vec<Vec<Vec64>> =
        (0..classes).map(|_| (0..rng.random_range(1..4)).map(|_| random_vec(rng, d)).collect()).collect();
    let prototypes = (0..classes).map(|_| l2_normalize(&random_vec(rng, pair.dynamic_branch.output_dim()))).collect();
    let mse_pairs =
        inputs.iter().map(|x| (x.clone(), x.iter().map(|v| v + rng.random_range(-0.2..0.2)).collect())).collect();
    LossContext {
        bce: Some(BceTerm { inputs: inputs.clone(), similarity }),
        sd_inputs: inputs,
        pll: Some(PllTerm { exemplars, prototypes, tau: rng.random_range(0.1..1.0) }),
        mse_pairs,
    }
}

/// Weights isolating one term of [`TERMS`]; `"weighted"` mixes all four.
pub fn term_weights(term: &str) -> LossWeights {
    let mut w = LossWeights::zero();
    match term {
        "bce" => w.bce = 1.0,
        "sd" => w.sd = 1.0,
        "pll" => w.pll = 1.0,
        "mse" => w.mse = 1.0,
        _ => w = LossWeights { bce: 0.7, sd: 1.3, pll: 0.5, mse: 2.0 },
    }
    w
}

/// Checks each term on `models` random models.
pub fn run_suite(models: usize, seed: u64) -> Result<Vec<TermReport>> {
    TERMS
        .iter()
        .map(|&term| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut worst: f64 = 0.0;
            for _ in 0..models {
                let pair = random_pair(&mut rng)?;
                let ctx = random_context(&mut rng, &pair);
                worst = worst.max(gradient_check(&pair, &ctx, &term_weights(term))?);
            }
            Ok(TermReport { term, models, worst_relative_error: worst })
        })
        .collect()
}
