//! Independent oracles shared by the integration tests and the acceptance gate.
//! Nothing here calls into the numerical routines it is used to check.
#![allow(dead_code)]

use rand::Rng;
use signed_knockoff::mixture::MixtureParams;
use signed_knockoff::procedure::{build_pairs, region_for, PairSet, Shrinkage, Side, SideStrategy};
use signed_knockoff::stats::{Sign, SignedPValue};
use signed_knockoff::strategy::StrategyKind;

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    assert!(n.is_multiple_of(2));
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + k as f64 * h);
    }
    s * h / 3.0
}

/// `Γ(k / 2)` by the half-integer recursion.
pub fn gamma_half(k: u32) -> f64 {
    assert!(k > 0);
    let (mut g, mut x) = if k.is_multiple_of(2) { (1.0, 1.0) } else { (std::f64::consts::PI.sqrt(), 0.5) };
    while x < k as f64 / 2.0 {
        g *= x;
        x += 1.0;
    }
    g
}

/// Student t CDF for integer `df` by quadrature of the density.
pub fn t_cdf_quadrature(x: f64, df: u32) -> f64 {
    let nu = df as f64;
    let c = gamma_half(df + 1) / ((nu * std::f64::consts::PI).sqrt() * gamma_half(df));
    let density = |t: f64| c * (1.0 + t * t / nu).powf(-(nu + 1.0) / 2.0);
    0.5 + simpson(density, 0.0, x, 20_000)
}

/// `Φ(z)` from the Maclaurin series of erf; accurate to ~1e-13 for |z| ≤ 5.
pub fn normal_cdf_series(z: f64) -> f64 {
    let x = z / std::f64::consts::SQRT_2;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term.abs() > 1e-18 * sum.abs().max(1e-300) {
        n += 1.0;
        term *= -x * x / n;
        sum += term / (2.0 * n + 1.0);
        if n > 500.0 {
            break;
        }
    }
    0.5 + sum / std::f64::consts::PI.sqrt()
}

/// Kolmogorov distance between a sample and a continuous CDF.
pub fn ks_distance(mut sample: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// `∫ f1` over `(-1, 1)`: the interior by quadrature after `x = ∓1 ± 2e^t`,
/// plus the Beta(a, 1) tail mass `(δ/2)^a` within `δ` of each end.
pub fn f1_total_mass(f1: impl Fn(f64) -> f64, p: &MixtureParams) -> f64 {
    let delta: f64 = 1e-12;
    let (lo, hi) = ((delta / 2.0).ln(), 0.5f64.ln());
    let left = simpson(|t| f1(-1.0 + 2.0 * t.exp()) * 2.0 * t.exp(), lo, hi, 40_000);
    let right = simpson(|t| f1(1.0 - 2.0 * t.exp()) * 2.0 * t.exp(), lo, hi, 40_000);
    let tails = p.lambda * (delta / 2.0).powf(p.shape_left) + (1.0 - p.lambda) * (delta / 2.0).powf(p.shape_right);
    left + right + tails
}

/// Maximizer over `s ∈ [1e-4, 1]` of `W ln s + (s - 1) S` by a coarse grid and
/// two refinement passes.
pub fn grid_search_shape(w: f64, s: f64) -> f64 {
    let obj = |a: f64| w * a.ln() + (a - 1.0) * s;
    let mut best = 1e-4;
    let (mut lo, mut hi) = (1e-4, 1.0);
    for _ in 0..3 {
        let step = (hi - lo) / 10_000.0;
        for k in 0..=10_000 {
            let a = lo + k as f64 * step;
            if obj(a) > obj(best) {
                best = a;
            }
        }
        lo = (best - step).max(1e-4);
        hi = (best + step).min(1.0);
    }
    best
}

/// Signed p-value from a sign and a two-sided p-value, exact in the tail.
fn from_p(sign: Sign, p: f64) -> SignedPValue {
    SignedPValue::from_p(sign, p.clamp(f64::MIN_POSITIVE, 1.0)).unwrap()
}

/// One draw from the two-group model. The alternative is drawn through
/// `u = V^(1/a)` on the `(x+1)/2` (left) or `(1-x)/2` (right) scale.
pub fn draw_from_model(rng: &mut impl Rng, p: &MixtureParams) -> SignedPValue {
    let coin = |rng: &mut dyn rand::RngCore| if rng.random_bool(0.5) { Sign::Positive } else { Sign::Negative };
    if rng.random::<f64>() < p.pi0 {
        return from_p(coin(rng), 1.0 - rng.random::<f64>());
    }
    let left = rng.random::<f64>() < p.lambda;
    let shape = if left { p.shape_left } else { p.shape_right };
    let v: f64 = 1.0 - rng.random::<f64>();
    let u = (v.ln() / shape).exp();
    // u small: close to the component's own end, p = 2u
    let (near, far) = if left { (Sign::Negative, Sign::Positive) } else { (Sign::Positive, Sign::Negative) };
    if u < 0.5 {
        from_p(near, 2.0 * u)
    } else {
        from_p(far, 2.0 - 2.0 * u)
    }
}

/// Random signed p-values: uniform nulls mixed with a few values near ±1.
pub fn random_values(rng: &mut impl Rng, n: usize) -> Vec<SignedPValue> {
    (0..n)
        .map(|_| {
            let sign = if rng.random_bool(0.5) { Sign::Positive } else { Sign::Negative };
            let p: f64 = if rng.random_bool(0.3) { rng.random_range(1e-6..0.02) } else { rng.random_range(1e-6..1.0) };
            from_p(sign, p)
        })
        .collect()
}

pub fn all_kinds() -> [StrategyKind; 4] {
    [
        StrategyKind::Alternate,
        StrategyKind::Nearest,
        StrategyKind::Lfdr,
        StrategyKind::LfdrEvery { refit_interval: 1 },
    ]
}

/// Walks the procedure step by step and checks, at every step: the
/// pair-partition identity by brute-force counting, monotone boundaries and
/// the exact knockoff involution. Also checks that a second run is identical.
pub fn check_trajectory(values: &[SignedPValue], kind: &StrategyKind, alpha: f64) -> Result<usize, String> {
    for v in values {
        if v.knockoff().knockoff() != *v || v.knockoff().sign() != v.sign() {
            return Err(format!("knockoff of {v:?} is not an involution"));
        }
    }
    let pairs = build_pairs(values).map_err(|e| e.to_string())?;
    let n = values.len();
    let mut stepper = Shrinkage::new(&pairs, alpha).map_err(|e| e.to_string())?;
    let mut strategy = kind.build(n);
    let (mut prev_l, mut prev_u) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut steps = 0;
    loop {
        let st = stepper.state();
        let r = st.region;
        let inside = |x: f64| x < r.lower || x > r.upper;
        let count = values.iter().filter(|v| inside(v.value())).count()
            + values.iter().filter(|v| inside(v.knockoff().value())).count();
        if count != n - st.accepted_pos - st.accepted_neg {
            return Err(format!(
                "step {}: {count} values in region, expected {} - {} - {}",
                st.k, n, st.accepted_pos, st.accepted_neg
            ));
        }
        if r.upper < prev_u || r.lower > prev_l {
            return Err(format!("step {}: boundaries moved inward: L {prev_l} -> {}, U {prev_u} -> {}", st.k, r.lower, r.upper));
        }
        if region_for(&pairs, st.accepted_pos, st.accepted_neg).map_err(|e| e.to_string())? != r {
            return Err(format!("step {}: stored region differs from recomputed one", st.k));
        }
        prev_l = r.lower;
        prev_u = r.upper;
        if stepper.stopped().is_some() {
            break;
        }
        stepper.step_with(&mut *strategy).map_err(|e| e.to_string())?;
        steps += 1;
    }
    let first = stepper.finish();
    let second = signed_knockoff::procedure::run(&pairs, &mut *kind.build(n), alpha).map_err(|e| e.to_string())?;
    if first != second {
        return Err("two runs on identical input differ".into());
    }
    Ok(steps)
}

/// Replaces the values at `flip` by their knockoffs: the same pairs with
/// different hidden bits.
pub fn flip_hidden(values: &[SignedPValue], flip: &[bool]) -> Vec<SignedPValue> {
    values.iter().zip(flip).map(|(v, &f)| if f { v.knockoff() } else { *v }).collect()
}

/// Runs `kind` on two datasets that differ only in the hidden bits of the
/// flagged pairs. Until one of those pairs is accepted the masked views and
/// the choices must coincide. Returns the number of steps compared.
pub fn check_masking(values: &[SignedPValue], flip: &[bool], kind: &StrategyKind) -> Result<usize, String> {
    let other = flip_hidden(values, flip);
    let (pa, pb) = (build_pairs(values).unwrap(), build_pairs(&other).unwrap());
    // a tiny alpha never stops early, so both walks run to exhaustion
    let alpha = 1e-12;
    let (mut a, mut b) = (Shrinkage::new(&pa, alpha).unwrap(), Shrinkage::new(&pb, alpha).unwrap());
    let (mut sa, mut sb): (Box<dyn SideStrategy + Send>, Box<dyn SideStrategy + Send>) =
        (kind.build(values.len()), kind.build(values.len()));
    let mut compared = 0;
    loop {
        let revealed_flip = (0..values.len()).any(|i| flip[i] && a.view().is_accepted(i));
        if revealed_flip || a.stopped().is_some() {
            return Ok(compared);
        }
        if a.view() != b.view() {
            return Err(format!("views differ at step {compared} before any flipped pair was revealed"));
        }
        let (ca, cb): (Side, Side) = (
            a.step_with(&mut *sa).map_err(|e| e.to_string())?,
            b.step_with(&mut *sb).map_err(|e| e.to_string())?,
        );
        if ca != cb {
            return Err(format!("choices differ at step {compared}: {ca} vs {cb}"));
        }
        compared += 1;
    }
}

pub fn pair_set(values: &[SignedPValue]) -> PairSet {
    build_pairs(values).unwrap()
}

/// Proptest settings without a regression file.
pub fn proptest_config(cases: u32) -> proptest::prelude::ProptestConfig {
    proptest::prelude::ProptestConfig { cases, failure_persistence: None, ..Default::default() }
}
