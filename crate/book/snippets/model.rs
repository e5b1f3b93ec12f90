use growmerge::gradcheck::{run_suite, TOLERANCE};
use growmerge::kernel::norm;
use growmerge::model::{BranchPair, ClusterHead, Encoder};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let encoder = Encoder::random(&[16, 64, 32], &mut rng).unwrap();
    let pair = BranchPair::from_pretrained(encoder, ClusterHead::random(32, 3, &mut rng).unwrap()).unwrap();

    let z = pair.dynamic_branch.encode(&[0.5; 16]).unwrap();
    assert!((norm(&z) - 1.0).abs() < 1e-12);
    assert_eq!(pair.static_branch, pair.dynamic_branch);

    for term in run_suite(10, 3).unwrap() {
        assert!(term.worst_relative_error < TOLERANCE, "{term:?}");
    }
}
