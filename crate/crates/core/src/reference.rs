//! A deliberately naive transcription of the shrinkage procedure, used as an
//! independent check on [`crate::procedure`]. It works on raw `f64` values,
//! recomputes every ordering, region and count from scratch at each step and
//! shares no code with the engine beyond the side-choice callback.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::procedure::{build_pairs, run, MaskedView, Side, StopReason};
use crate::stats::SignedPValue;
use crate::strategy::StrategyKind;

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrace {
    pub rejected: Vec<usize>,
    pub fdr_hat_trace: Vec<f64>,
    pub steps: Vec<Side>,
    pub accepted_positive: usize,
    pub accepted_negative: usize,
    pub stopped_by: StopReason,
}

fn sgn(q: f64) -> f64 {
    if q < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Runs the procedure on raw signed p-values. `choose(i, j)` is asked for a
/// side whenever neither side is exhausted.
pub fn reference_run(
    q: &[f64],
    alpha: f64,
    mut choose: impl FnMut(usize, usize) -> Side,
) -> ReferenceTrace {
    let n = q.len();
    let knock: Vec<f64> = q.iter().map(|&x| sgn(x) - x).collect();

    // i-th closest to 1/2 (positive) / -1/2 (negative)
    let mut plus: Vec<usize> = (0..n).filter(|&i| q[i] >= 0.0).collect();
    let mut minus: Vec<usize> = (0..n).filter(|&i| q[i] < 0.0).collect();
    let far = |i: usize| q[i].abs().max(knock[i].abs());
    plus.sort_by(|&a, &b| far(a).partial_cmp(&far(b)).unwrap().then(a.cmp(&b)));
    minus.sort_by(|&a, &b| far(a).partial_cmp(&far(b)).unwrap().then(a.cmp(&b)));
    let (n_plus, n_minus) = (plus.len(), minus.len());

    let region = |i: usize, j: usize| -> (f64, f64) {
        let upper = if i == 0 { 1.0 } else { q[plus[i - 1]].max(knock[plus[i - 1]]) };
        let lower = if j == 0 { -1.0 } else { q[minus[j - 1]].min(knock[minus[j - 1]]) };
        (lower, upper)
    };
    let inside = |x: f64, (lower, upper): (f64, f64)| (-1.0..lower).contains(&x) || (x > upper && x <= 1.0);
    let estimate = |r: (f64, f64)| {
        let hits = q.iter().filter(|&&x| inside(x, r)).count();
        let fake = knock.iter().filter(|&&x| inside(x, r)).count();
        (1 + fake) as f64 / hits.max(1) as f64
    };

    // Step 1
    let mut i = if n_plus > 0 { 1 } else { 0 };
    let mut j = if n_minus > 0 { 1 } else { 0 };
    let mut trace = vec![estimate(region(i, j))];
    let mut steps = Vec::new();
    let stopped_by = loop {
        // Step 3, also checked on the initial region
        if *trace.last().unwrap() <= alpha {
            break StopReason::FdrThreshold;
        }
        if i == n_plus && j == n_minus {
            break StopReason::Exhaustion;
        }
        // Step 2
        let side = if j == n_minus {
            Side::Positive
        } else if i == n_plus {
            Side::Negative
        } else {
            choose(i, j)
        };
        match side {
            Side::Positive => i += 1,
            Side::Negative => j += 1,
        }
        steps.push(side);
        trace.push(estimate(region(i, j)));
    };

    let r = region(i, j);
    let rejected = (0..n).filter(|&k| inside(q[k], r)).collect();
    ReferenceTrace {
        rejected,
        fdr_hat_trace: trace,
        steps,
        accepted_positive: i,
        accepted_negative: j,
        stopped_by,
    }
}

/// Reference alternate rule: positive on even steps.
pub fn reference_alternate(q: &[f64]) -> impl FnMut(usize, usize) -> Side {
    let start = usize::from(q.iter().any(|&x| x >= 0.0)) + usize::from(q.iter().any(|&x| x < 0.0));
    move |i, j| {
        if (i + j - start) % 2 == 0 {
            Side::Positive
        } else {
            Side::Negative
        }
    }
}

/// Reference nearest rule: side whose next pair is closer to ±1/2, ties positive.
pub fn reference_nearest(q: &[f64]) -> impl FnMut(usize, usize) -> Side + '_ {
    let dist = |x: f64| (x.abs() - 0.5).abs();
    move |i, j| {
        let mut pos: Vec<f64> = q.iter().copied().filter(|&x| x >= 0.0).map(dist).collect();
        let mut neg: Vec<f64> = q.iter().copied().filter(|&x| x < 0.0).map(dist).collect();
        pos.sort_by(|a, b| a.partial_cmp(b).unwrap());
        neg.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if neg[j] < pos[i] {
            Side::Negative
        } else {
            Side::Positive
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Mismatch {
    pub instance: usize,
    pub strategy: String,
    pub q: Vec<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub instances: usize,
    pub comparisons: usize,
    pub mismatches: Vec<Mismatch>,
}

/// Random instance with `n ≤ max_n`, mixing uniform nulls with values near `±1`.
pub fn random_instance(rng: &mut impl Rng, max_n: usize) -> (Vec<f64>, f64) {
    let n = rng.random_range(1..=max_n);
    let q = (0..n)
        .map(|_| {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let mag: f64 = if rng.random_bool(0.4) {
                1.0 - rng.random_range(0.0..0.05)
            } else {
                rng.random_range(0.0..1.0)
            };
            sign * mag.max(1e-9)
        })
        .collect();
    (q, rng.random_range(0.05..0.95))
}

/// Compares the engine with the reference on random small instances under
/// the alternate, nearest and lfdr rules.
pub fn equivalence_suite(instances: usize, max_n: usize, seed: u64) -> EquivalenceReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = [StrategyKind::Alternate, StrategyKind::Nearest, StrategyKind::LfdrEvery { refit_interval: 1 }];
    let mut mismatches = Vec::new();
    let mut comparisons = 0;
    for instance in 0..instances {
        let (q, alpha) = random_instance(&mut rng, max_n);
        let values: Vec<SignedPValue> = q.iter().map(|&x| SignedPValue::new(x).unwrap()).collect();
        let pairs = build_pairs(&values).unwrap();
        for kind in &kinds {
            comparisons += 1;
            let engine = run(&pairs, &mut *kind.build(q.len()), alpha).unwrap();
            let reference = match kind {
                StrategyKind::Alternate => reference_run(&q, alpha, reference_alternate(&q)),
                StrategyKind::Nearest => reference_run(&q, alpha, reference_nearest(&q)),
                _ => {
                    let mut strat = kind.build(q.len());
                    reference_run(&q, alpha, |i, j| {
                        strat.choose(&MaskedView::new(&pairs, i, j).unwrap())
                    })
                }
            };
            let same = engine.rejected == reference.rejected
                && engine.fdr_hat_trace == reference.fdr_hat_trace
                && engine.steps == reference.steps
                && engine.accepted_positive == reference.accepted_positive
                && engine.accepted_negative == reference.accepted_negative
                && engine.stopped_by == reference.stopped_by;
            if !same {
                mismatches.push(Mismatch {
                    instance,
                    strategy: kind.name(),
                    q: q.clone(),
                    alpha,
                });
            }
        }
    }
    EquivalenceReport {
        instances,
        comparisons,
        mismatches,
    }
}
