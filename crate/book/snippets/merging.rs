use growmerge::merge::{local_density, sift_samples, unify_branches};
use growmerge::model::{BranchPair, ClusterHead, Encoder};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    // four points of one pseudo-class near the origin and one stray point
    let class = vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![0.0, 0.1], vec![0.1, 0.1], vec![5.0, 5.0]];
    let g = local_density(&class, 2);
    assert!(g[4] > 40.0 && g[..4].iter().all(|v| *v < 0.05));
    assert_eq!(sift_samples(&[class], 2, 0.2), vec![vec![0, 1, 2, 3]]);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = Encoder::random(&[2, 4, 2], &mut rng).unwrap();
    let b = Encoder::random(&[2, 4, 2], &mut rng).unwrap();
    let mut pair = BranchPair { static_branch: a.clone(), dynamic_branch: b, head: ClusterHead::zeros(2, 1) };
    unify_branches(&mut pair, 1.0).unwrap();
    assert_eq!(pair.dynamic_branch, a);
}
