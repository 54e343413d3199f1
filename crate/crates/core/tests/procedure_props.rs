mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use signed_knockoff::procedure::{build_pairs, run, MaskedView, StopReason};
use signed_knockoff::reference::{equivalence_suite, reference_alternate, reference_run};
use signed_knockoff::strategy::{LfdrStrategy, StrategyKind};
use signed_knockoff::procedure::SideStrategy;

use common::{all_kinds, check_masking, check_trajectory, random_values};

proptest! {
    #![proptest_config(common::proptest_config(64))]

    #[test]
    fn trajectory_invariants(seed in any::<u64>(), n in 1usize..80, alpha in 0.02f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = random_values(&mut rng, n);
        for kind in all_kinds() {
            if let Err(e) = check_trajectory(&values, &kind, alpha) {
                prop_assert!(false, "{}: {}", kind.name(), e);
            }
        }
    }

    #[test]
    fn hidden_bits_do_not_steer_strategies(seed in any::<u64>(), n in 2usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = random_values(&mut rng, n);
        let flip: Vec<bool> = (0..n).map(|_| rng.random_bool(0.2)).collect();
        for kind in all_kinds() {
            if let Err(e) = check_masking(&values, &flip, &kind) {
                prop_assert!(false, "{}: {}", kind.name(), e);
            }
        }
    }

    #[test]
    fn rejected_set_lies_in_final_region(seed in any::<u64>(), n in 1usize..100, alpha in 0.05f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = random_values(&mut rng, n);
        let pairs = build_pairs(&values).unwrap();
        let r = run(&pairs, &mut *StrategyKind::Lfdr.build(n), alpha).unwrap();
        match r.stopped_by {
            StopReason::FdrThreshold => {
                prop_assert!(*r.fdr_hat_trace.last().unwrap() <= alpha);
                let want: Vec<usize> = (0..n).filter(|&i| r.region.contains(values[i].value())).collect();
                prop_assert_eq!(&r.rejected, &want);
            }
            StopReason::Exhaustion => prop_assert!(r.rejected.is_empty()),
        }
        prop_assert_eq!(r.rejected_negative + r.rejected_positive, r.rejected.len());
        prop_assert_eq!(r.fdr_hat_trace.len(), r.steps.len() + 1);
    }
}

#[test]
fn masking_comparisons_are_not_vacuous() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut compared = 0;
    for _ in 0..50 {
        let values = random_values(&mut rng, 40);
        let flip: Vec<bool> = (0..40).map(|_| rng.random_bool(0.1)).collect();
        compared += check_masking(&values, &flip, &StrategyKind::LfdrEvery { refit_interval: 1 }).unwrap();
    }
    assert!(compared > 200, "only {compared} steps compared");
}

#[test]
fn strategy_choice_is_pure() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..30 {
        let values = random_values(&mut rng, 50);
        let pairs = build_pairs(&values).unwrap();
        let view = MaskedView::new(&pairs, pairs.n_positive().min(3), pairs.n_negative().min(2)).unwrap();
        let mut s = LfdrStrategy::for_size(50);
        let first = s.choose(&view);
        assert_eq!(s.choose(&view), first);
        assert_eq!(LfdrStrategy::for_size(50).choose(&view), first);
    }
}

#[test]
fn engine_matches_reference_on_hand_example() {
    let q = [-0.99, -0.98, 0.97, 0.96, 0.2, -0.3, 0.55, -0.61];
    let values: Vec<_> = q.iter().map(|&x| signed_knockoff::stats::SignedPValue::new(x).unwrap()).collect();
    let engine = run(&build_pairs(&values).unwrap(), &mut *StrategyKind::Alternate.build(q.len()), 0.5).unwrap();
    let reference = reference_run(&q, 0.5, reference_alternate(&q));
    assert_eq!(engine.rejected, reference.rejected);
    assert_eq!(engine.fdr_hat_trace, reference.fdr_hat_trace);
    assert_eq!(engine.steps, reference.steps);
}

#[test]
fn reference_equivalence_medium_suite() {
    let r = equivalence_suite(300, 12, 99);
    assert_eq!(r.comparisons, 900);
    assert!(r.mismatches.is_empty(), "{:?}", r.mismatches.first());
}
