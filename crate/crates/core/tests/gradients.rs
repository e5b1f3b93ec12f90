use growmerge::gradcheck::{random_context, random_pair, run_suite, term_weights};
use growmerge::kernel::Vec64;
use growmerge::model::{backward, compare_gradients, evaluate, BranchPair, ClusterHead, Encoder, LossContext, OptState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec64 {
    (0..d).map(|_| rng.random_range(-1.5..1.5)).collect()
}

#[test]
fn every_loss_matches_finite_differences() {
    for r in run_suite(100, 0x5eed).unwrap() {
        assert!(r.passed(), "{}: worst relative error {:e}", r.term, r.worst_relative_error);
    }
}

#[test]
fn corrupted_gradient_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pair = random_pair(&mut rng).unwrap();
    let ctx = random_context(&mut rng, &pair);
    let weights = term_weights("weighted");
    let (_, mut grads) = backward(&pair, &ctx, &weights).unwrap();
    grads.dynamic.layers[0].weight[0] += 0.5;
    assert!(compare_gradients(&pair, &ctx, &weights, &grads).unwrap() > 1e-2);
}

#[test]
fn distillation_is_stationary_when_branches_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let enc = Encoder::random(&[4, 8, 3], &mut rng).unwrap();
    let pair = BranchPair::from_pretrained(enc, ClusterHead::random(3, 2, &mut rng).unwrap()).unwrap();
    let ctx = LossContext { sd_inputs: (0..6).map(|_| random_vec(&mut rng, 4)).collect(), ..Default::default() };
    let (loss, grads) = backward(&pair, &ctx, &term_weights("sd")).unwrap();
    assert_eq!(loss.sd, 0.0);
    assert!(grads.norm() < 1e-8);
}

#[test]
fn static_branch_is_untouched_by_training_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut pair = random_pair(&mut rng).unwrap();
    let frozen = pair.static_branch.clone();
    let mut opt = OptState::new(0.1, 0.9, 1e-4).unwrap();
    for _ in 0..20 {
        let ctx = random_context(&mut rng, &pair);
        let (_, grads) = backward(&pair, &ctx, &term_weights("weighted")).unwrap();
        opt.step(&mut pair.dynamic_branch, &mut pair.head, &grads).unwrap();
        opt.end_epoch();
    }
    assert_eq!(pair.static_branch, frozen);
    assert_ne!(pair.dynamic_branch, frozen);
}

#[test]
fn losses_are_finite_and_nonnegative() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..200 {
        let pair = random_pair(&mut rng).unwrap();
        let ctx = random_context(&mut rng, &pair);
        let l = evaluate(&pair, &ctx, &term_weights("weighted")).unwrap();
        for v in [l.bce, l.sd, l.pll, l.mse, l.total] {
            assert!(v.is_finite() && v >= 0.0, "{l:?}");
        }
    }
}
