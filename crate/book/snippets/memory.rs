use growmerge::kernel::Metric;
use growmerge::memory::{herd_toward, ExemplarStore};
use growmerge::model::Encoder;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    // herding in a plain 1-d space: the target mean is 2.0
    let points = vec![vec![0.0], vec![2.0], vec![4.0], vec![1.0]];
    assert_eq!(herd_toward(&points, &[2.0], 3), vec![1, 3, 2]);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let encoder = Encoder::random(&[2, 8, 4], &mut rng).unwrap();
    let mut store = ExemplarStore::new(6, Metric::Cosine).unwrap();
    let left: Vec<_> = (0..10).map(|i| vec![-5.0, i as f64 * 0.1]).collect();
    let right: Vec<_> = (0..10).map(|i| vec![5.0, i as f64 * 0.1]).collect();
    store.build_class(0, &left, &encoder, 3, 0).unwrap();
    store.build_class(1, &right, &encoder, 3, 0).unwrap();

    assert_eq!(store.total_exemplars(), 6);
    assert_eq!(store.classify(&encoder, &[-4.0, 0.3]).unwrap(), 0);
    assert_eq!(store.classify(&encoder, &[4.0, 0.3]).unwrap(), 1);
}
