use growmerge::count::{default_range, semi_kmeans};

fn main() {
    let anchored = vec![(vec![0.0, 0.0], 7), (vec![0.2, 0.0], 7)];
    let free = vec![vec![10.0, 0.0], vec![10.2, 0.0], vec![0.0, 10.0], vec![0.1, 10.0]];
    let fit = semi_kmeans(&free, &anchored, 3, 0).unwrap();

    assert_eq!(fit.anchored, vec![0, 0]);
    assert_eq!(fit.free[0], fit.free[1]);
    assert_eq!(fit.free[2], fit.free[3]);
    assert_ne!(fit.free[0], fit.free[2]);
    assert!(fit.inertia.windows(2).all(|w| w[1] <= w[0]));

    assert_eq!(default_range(Some(3)), 1..=8);
    assert_eq!(default_range(None), 1..=10);
}
