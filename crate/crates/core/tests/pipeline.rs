use std::collections::BTreeMap;

use growmerge::checkpoint::{decode, encode};
use growmerge::kernel::{dot, l2_normalize, mean, Metric, Vec64};
use growmerge::memory::ExemplarStore;
use growmerge::merge::{run_merging, unify_categories, MergeConfig};
use growmerge::model::{BranchPair, ClusterHead, Encoder, LossWeights};
use growmerge::runner::{pretrain_initial, run_experiment, run_stages, stage_rng, DataSource, RunConfig};
use growmerge::scenario::{generate_synthetic, Split};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn small_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        data: DataSource::Synthetic { classes: 6, per_class: 60, dim: 8, separation: 8.0 },
        seed,
        ..RunConfig::default()
    };
    cfg.scenario.timesteps = 2;
    cfg.pretrain.epochs = 5;
    cfg.grow.epochs = 3;
    cfg.grow.epsilon = 0.2;
    cfg.merge.epochs = 3;
    cfg.merge.sift_j = 5;
    cfg
}

fn blob(center: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec64> {
    let noise = Normal::new(0.0, 0.3).unwrap();
    (0..n).map(|_| center.iter().map(|c| c + noise.sample(rng)).collect()).collect()
}

#[test]
fn pretraining_separates_seven_classes() {
    let samples = generate_synthetic(7, 100, 16, 8.0, 4).unwrap();
    let train: Vec<_> = samples.iter().filter(|s| s.split == Split::Train).cloned().collect();
    let cfg = RunConfig { seed: 4, ..RunConfig::default() };
    let (pair, store) = pretrain_initial(&train, &cfg, &mut stage_rng(4, 0)).unwrap();
    assert_eq!(pair.static_branch, pair.dynamic_branch);
    assert_eq!(store.num_classes(), 7);
    let test: Vec<_> = samples.iter().filter(|s| s.split == Split::Test).collect();
    let hits = test.iter().filter(|s| store.classify(&pair.dynamic_branch, &s.x).unwrap() == s.label.unwrap()).count();
    assert!(hits as f64 / test.len() as f64 >= 0.95, "{hits}/{}", test.len());
}

#[test]
fn zero_pretraining_epochs_still_fills_memory() {
    let samples = generate_synthetic(4, 30, 6, 8.0, 1).unwrap();
    let mut cfg = RunConfig { budget: 40, ..RunConfig::default() };
    cfg.pretrain.epochs = 0;
    let (pair, store) = pretrain_initial(&samples, &cfg, &mut stage_rng(1, 0)).unwrap();
    assert_eq!(pair.static_branch, pair.dynamic_branch);
    assert_eq!(store.class_ids(), vec![0, 1, 2, 3]);
    assert!(store.classes().all(|(_, c)| c.exemplars.len() == 10 && c.prototype.is_some()));
}

#[test]
fn initial_stage_only_run() {
    let mut cfg = small_config(2);
    cfg.scenario.timesteps = 0;
    cfg.scenario.class_split = Some(vec![1.0]);
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.ledger.records.len(), 1);
    assert_eq!(out.summary.m_f, 0.0);
    assert_eq!(out.summary.m_d, None);
    assert!(out.distances.is_empty());
}

#[test]
fn runs_are_reproducible_and_resumable() {
    let cfg = small_config(9);
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.report(&cfg).to_json(), b.report(&cfg).to_json());
    assert_eq!(encode(&a.checkpoint), encode(&b.checkpoint));

    let partial = run_stages(&cfg, None, Some(1)).unwrap();
    assert_eq!(partial.ledger.records.len(), 2);
    let restored = decode(&encode(&partial.checkpoint)).unwrap();
    let resumed = run_stages(&cfg, Some(restored), None).unwrap();
    assert_eq!(resumed.ledger, a.ledger);
    assert_eq!(encode(&resumed.checkpoint), encode(&a.checkpoint));
}

#[test]
fn resume_rejects_other_seed() {
    let cfg = small_config(3);
    let partial = run_stages(&cfg, None, Some(1)).unwrap();
    let other = small_config(4);
    assert!(growmerge::runner::resume_experiment(&other, partial.checkpoint).is_err());
}

fn two_class_setup(rng: &mut ChaCha8Rng) -> (BranchPair, ExemplarStore) {
    let enc = Encoder::random(&[4, 16, 8], rng).unwrap();
    let pair = BranchPair::from_pretrained(enc, ClusterHead::random(8, 2, rng).unwrap()).unwrap();
    let mut store = ExemplarStore::new(40, Metric::Cosine).unwrap();
    store.build_class(0, &blob(&[3.0, 0.0, 0.0, 0.0], 20, rng), &pair.static_branch, 20, 0).unwrap();
    store.build_class(1, &blob(&[0.0, 3.0, 0.0, 0.0], 20, rng), &pair.static_branch, 20, 0).unwrap();
    (pair, store)
}

#[test]
fn merging_without_epochs_changes_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut pair, mut store) = two_class_setup(&mut rng);
    let before = (pair.clone(), store.clone());
    let cfg = MergeConfig { epochs: 0, ..MergeConfig::default() };
    let mut opt = growmerge::runner::OptimizerConfig::default().state().unwrap();
    let log = run_merging(&mut pair, &mut store, &[], &cfg, &LossWeights::default(), &mut opt, &mut rng).unwrap();
    assert!(log.is_empty());
    assert_eq!((pair, store), before);
}

#[test]
fn prototype_loss_falls_on_separable_classes() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut pair, mut store) = two_class_setup(&mut rng);
    let weights = LossWeights { pll: 1.0, ..LossWeights::zero() };
    let mut opt = growmerge::runner::OptimizerConfig::default().state().unwrap();
    let log = run_merging(&mut pair, &mut store, &[], &MergeConfig::default(), &weights, &mut opt, &mut rng).unwrap();
    assert_eq!(log.len(), 50);
    assert!(log[49].pll < 0.1, "{:?}", log[49]);
    assert!(log[49].pll < log[0].pll);
}

#[test]
fn unified_classes_get_fresh_ids_and_respect_budget() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (pair, mut store) = two_class_setup(&mut rng);
    let centers = [[0.0, 0.0, 3.0, 0.0], [0.0, 0.0, 0.0, 3.0]];
    let sifted: BTreeMap<usize, Vec<Vec64>> =
        centers.iter().enumerate().map(|(p, c)| (p + 10, blob(c, 30, &mut rng))).collect();
    let mapping = unify_categories(&pair.dynamic_branch, &sifted, &mut store, 2).unwrap();
    assert_eq!(mapping, BTreeMap::from([(10, 2), (11, 3)]));
    assert!(store.total_exemplars() <= 40);
    assert!(store.classes().all(|(_, c)| c.exemplars.len() == 10));
    for (p, id) in mapping {
        let truth = l2_normalize(&mean(&pair.dynamic_branch.encode_all(&sifted[&p]).unwrap()).unwrap());
        let mu = &store.class(id).unwrap().prototype.as_ref().unwrap().mu;
        assert!(1.0 - dot(&truth, mu) < 0.05);
        assert!(store.class(id).unwrap().exemplars.iter().all(|e| e.source_timestep == 2 && e.label == id));
    }
}
