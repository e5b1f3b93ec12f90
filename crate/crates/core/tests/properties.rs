use std::collections::BTreeMap;

use growmerge::checkpoint::{decode, encode, Checkpoint};
use growmerge::count::semi_kmeans;
use growmerge::grow::wta_similarity;
use growmerge::kernel::{distance, hungarian_assign, l2_normalize, softmax, CostMatrix, Metric, Vec64};
use growmerge::memory::{herd_exemplars, ExemplarStore};
use growmerge::merge::sift_samples;
use growmerge::metrics::{best_matching, clustering_accuracy, MetricsLedger};
use growmerge::model::{ema_merge, BranchPair, ClusterHead, Encoder};
use growmerge::scenario::{build_stream, generate_synthetic, ScenarioKind, ScenarioSpec, Split};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vectors(n: std::ops::Range<usize>, dim: usize) -> impl Strategy<Value = Vec<Vec64>> {
    prop::collection::vec(prop::collection::vec(-3.0..3.0f64, dim), n)
}

fn square(max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1..=max).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(0.0..10.0f64, n), n))
}

fn labelings(max_len: usize, max_label: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1..=max_len).prop_flat_map(move |n| {
        (prop::collection::vec(0..max_label, n), prop::collection::vec(0..max_label, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distances_are_symmetric_and_nonnegative(v in vectors(2..3, 5)) {
        for metric in [Metric::SquaredEuclidean, Metric::Cosine] {
            let ab = distance(&v[0], &v[1], metric).unwrap();
            let ba = distance(&v[1], &v[0], metric).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab >= -1e-12);
            prop_assert!(distance(&v[0], &v[0], metric).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn normalized_vectors_have_unit_norm(v in prop::collection::vec(-5.0..5.0f64, 1..8)) {
        let n = growmerge::kernel::norm(&v);
        let u = l2_normalize(&v);
        if n > 1e-6 {
            prop_assert!((growmerge::kernel::norm(&u) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0..50.0f64, 1..10)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn hungarian_matches_brute_force(rows in square(6)) {
        let a = hungarian_assign(&CostMatrix::from_rows(&rows).unwrap()).unwrap();
        let mut seen = a.row_to_col.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..rows.len()).collect::<Vec<_>>());
        let oracle = growmerge_oracles::brute_min_cost(&rows);
        prop_assert!((a.total_cost - oracle).abs() < 1e-9, "{} vs {}", a.total_cost, oracle);
    }

    #[test]
    fn accuracy_matches_brute_force((pred, truth) in labelings(30, 6)) {
        let acc = clustering_accuracy(&pred, &truth).unwrap();
        prop_assert!((acc - growmerge_oracles::brute_accuracy(&pred, &truth)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&acc));
        let h = best_matching(&pred, &truth).unwrap();
        let mut targets: Vec<_> = h.values().collect();
        targets.sort_unstable();
        targets.dedup();
        prop_assert_eq!(targets.len(), h.len());
    }

    #[test]
    fn accuracy_ignores_label_names((pred, truth) in labelings(30, 6), shift in 1usize..50) {
        let renamed: Vec<usize> = pred.iter().map(|p| (5 - p) * 7 + shift).collect();
        let a = clustering_accuracy(&pred, &truth).unwrap();
        prop_assert!((a - clustering_accuracy(&renamed, &truth).unwrap()).abs() < 1e-12);
        prop_assert!((a - clustering_accuracy(&truth, &pred).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn herding_matches_greedy_oracle(samples in vectors(1..15, 3), m in 1usize..10, seed in 0u64..1000) {
        let enc = Encoder::random(&[3, 5, 2], &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let chosen = herd_exemplars(&samples, &enc, m).unwrap();
        let emb = enc.encode_all(&samples).unwrap();
        prop_assert!(growmerge_oracles::herding_is_greedy(&emb, &chosen, m, 1e-12));
        let oracle = growmerge_oracles::brute_herding(&emb, m);
        if chosen != oracle {
            // Only a rounding-level tie may separate the two.
            prop_assert!(growmerge_oracles::herding_is_greedy(&emb, &oracle, m, 1e-12));
        }
    }

    #[test]
    fn sifting_removes_the_ceiling_fraction(classes in prop::collection::vec(vectors(0..25, 2), 1..4),
                                            j in 1usize..20, fraction in 0.0..=1.0f64) {
        let kept = sift_samples(&classes, j, fraction);
        for (k, c) in kept.iter().zip(&classes) {
            let removed = c.len() - k.len();
            prop_assert!(removed as f64 <= (fraction * c.len() as f64).ceil() + 1e-9);
            prop_assert!(removed as f64 >= (fraction * c.len() as f64) - 1e-9);
            prop_assert!(k.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn winner_take_all_is_symmetric_and_reflexive(v in vectors(2..3, 8), k in 1usize..9) {
        prop_assert_eq!(wta_similarity(&v[0], &v[0], k), 1);
        prop_assert_eq!(wta_similarity(&v[0], &v[1], k), wta_similarity(&v[1], &v[0], k));
    }

    #[test]
    fn semi_kmeans_keeps_anchors_and_descends(points in vectors(0..20, 2), anchors in vectors(1..8, 2),
                                              extra in 0usize..4, seed in 0u64..100) {
        let anchored: Vec<(Vec64, usize)> = anchors.into_iter().enumerate().map(|(i, x)| (x, (i % 3) * 10)).collect();
        let labels = anchored.iter().map(|a| a.1).collect::<std::collections::BTreeSet<_>>();
        let fit = semi_kmeans(&points, &anchored, labels.len() + extra, seed).unwrap();
        let slot: BTreeMap<usize, usize> = labels.iter().enumerate().map(|(i, &y)| (y, i)).collect();
        for ((_, y), a) in anchored.iter().zip(&fit.anchored) {
            prop_assert_eq!(slot[y], *a);
        }
        prop_assert!(fit.free.iter().all(|&c| c < labels.len() + extra));
        prop_assert!(fit.inertia.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{:?}", fit.inertia);
    }

    #[test]
    fn ema_is_a_convex_combination(seed in 0u64..1000, alpha in 0.0..=1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Encoder::random(&[3, 4, 2], &mut rng).unwrap();
        let d = Encoder::random(&[3, 4, 2], &mut rng).unwrap();
        let m = ema_merge(&s, &d, alpha).unwrap();
        for ((ms, ss), ds) in m.param_slices().iter().zip(s.param_slices()).zip(d.param_slices()) {
            for ((x, a), b) in ms.iter().zip(ss).zip(ds) {
                prop_assert!((x - (alpha * a + (1.0 - alpha) * b)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forgetting_is_the_largest_drop(acc in prop::collection::vec(0.0..=1.0f64, 1..8)) {
        let s = MetricsLedger::from_known(&acc).finalize().unwrap();
        let expected = acc[1..].iter().map(|a| acc[0] - a).fold(if acc.len() > 1 { f64::NEG_INFINITY } else { 0.0 }, f64::max);
        prop_assert_eq!(s.m_f, expected);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoint_round_trips(seed in any::<u64>(), weights in prop::collection::vec(any::<f64>(), 8)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = Encoder::random(&[2, 2, 2], &mut rng).unwrap();
        let mut pair = BranchPair::from_pretrained(enc, ClusterHead::random(2, 3, &mut rng).unwrap()).unwrap();
        pair.dynamic_branch.layers[0].weight.copy_from_slice(&weights[..4]);
        let mut store = ExemplarStore::new(6, Metric::Cosine).unwrap();
        store.build_class(4, &[vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.0, 3.0]], &pair.static_branch, 2, 0).unwrap();
        let mut ledger = MetricsLedger::default();
        ledger.push(0, weights[4].abs().fract(), None);
        ledger.push(1, 0.5, Some(weights[5]));
        let ckpt = Checkpoint { seed, timestep: 1, pair, store, ledger, novel_counts: vec![3] };
        let bytes = encode(&ckpt);
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn every_training_sample_is_used_once(seed in 0u64..500, t in 1usize..4) {
        let samples = generate_synthetic(10, 20, 8, 6.0, seed).unwrap();
        let spec = ScenarioSpec { kind: ScenarioKind::CI, timesteps: t, seed, ..ScenarioSpec::default() };
        let stream = build_stream(&samples, &spec).unwrap();
        let mut ids: Vec<u64> = stream.batches.iter().flat_map(|b| b.train.iter().map(|s| s.id)).collect();
        let n = ids.len();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), n);
        prop_assert_eq!(n, samples.iter().filter(|s| s.split == Split::Train).count());
        for b in &stream.batches[1..] {
            for c in &b.novel_classes {
                prop_assert_eq!(stream.class_origin[c], b.t);
            }
        }
    }
}
