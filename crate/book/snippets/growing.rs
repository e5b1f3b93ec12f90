use growmerge::grow::{run_growing, top_k_indices, wta_similarity, GrowConfig};
use growmerge::model::{BranchPair, ClusterHead, Encoder, LossWeights};
use growmerge::runner::OptimizerConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    assert_eq!(top_k_indices(&[0.1, 0.9, 0.5, 0.7], 2), vec![1, 3]);
    assert_eq!(wta_similarity(&[0.1, 0.9, 0.5, 0.7], &[0.0, 0.8, 0.1, 0.9], 2), 1);
    assert_eq!(wta_similarity(&[0.1, 0.9, 0.5, 0.7], &[0.9, 0.8, 0.1, 0.0], 2), 0);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let encoder = Encoder::random(&[4, 16, 8], &mut rng).unwrap();
    let mut pair = BranchPair::from_pretrained(encoder, ClusterHead::random(8, 2, &mut rng).unwrap()).unwrap();
    let novel: Vec<Vec<f64>> = (0..40)
        .map(|i| {
            let c = if i % 2 == 0 { 4.0 } else { -4.0 };
            vec![c + rng.random_range(-0.5..0.5), c, rng.random_range(-0.5..0.5), 1.0]
        })
        .collect();
    let cfg = GrowConfig { epochs: 10, wta_k: 3, ..GrowConfig::default() };
    let mut opt = OptimizerConfig::default().state().unwrap();
    let log = run_growing(&mut pair, &novel, &cfg, &LossWeights::default(), &mut opt, &mut rng).unwrap();

    assert_eq!(log.len(), 10);
    assert!(log.iter().all(|l| l.total.is_finite()));
    assert_ne!(pair.static_branch, pair.dynamic_branch);
}
