//! The signed-knockoff stepwise procedure.
//!
//! Every hypothesis contributes the unordered pair `{q, sign(q) - q}`. The
//! rejection region `[-1, L) ∪ (U, 1]` starts just outside the pair closest
//! to `-1/2` and the pair closest to `1/2`, then shrinks one pair at a time
//! towards the endpoints. The side to shrink is chosen by a [`SideStrategy`]
//! that only ever sees a [`MaskedView`]: the pair locations plus the true
//! identity of already accepted pairs. Shrinkage stops at the first region
//! whose estimate `(1 + #knockoffs in R) / max(#q in R, 1)` is at most the
//! target level.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::stats::{Sign, SignedPValue};

/// Which side of the rejection region shrinks next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Positive,
    Negative,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Positive => f.write_str("positive"),
            Side::Negative => f.write_str("negative"),
        }
    }
}

/// One hypothesis: its signed p-value and knockoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedPair {
    pub index: usize,
    pub q: SignedPValue,
    pub knockoff: SignedPValue,
}

impl SignedPair {
    pub fn new(index: usize, q: SignedPValue) -> Self {
        Self {
            index,
            q,
            knockoff: q.knockoff(),
        }
    }

    /// `b = I(|q| > 1/2)`; a pair sitting exactly on `±1/2` counts as 1.
    pub fn b(&self) -> bool {
        self.q.magnitude() >= 0.5
    }

    pub fn sign(&self) -> Sign {
        self.q.sign()
    }

    /// Larger magnitude of the two pair elements.
    pub fn outer(&self) -> f64 {
        self.q.magnitude().max(self.q.complement())
    }

    /// Smaller magnitude of the two pair elements.
    pub fn inner(&self) -> f64 {
        self.q.magnitude().min(self.q.complement())
    }

    pub fn distance(&self) -> f64 {
        self.q.distance_to_half()
    }
}

/// All pairs, split by sign and ranked by distance to `±1/2`.
#[derive(Debug, Clone)]
pub struct PairSet {
    pairs: Vec<SignedPair>,
    pos_order: Vec<usize>,
    neg_order: Vec<usize>,
    rank: Vec<usize>,
    // sorted element values for region counts
    pos_q: Vec<f64>,
    pos_ko: Vec<f64>,
    neg_q: Vec<f64>,
    neg_ko: Vec<f64>,
}

/// Builds the pair set from signed p-values, indexed by input position.
pub fn build_pairs(q_values: &[SignedPValue]) -> Result<PairSet> {
    if q_values.is_empty() {
        return Err(Error::Empty("no signed p-values"));
    }
    let pairs: Vec<SignedPair> = q_values
        .iter()
        .enumerate()
        .map(|(i, &q)| SignedPair::new(i, q))
        .collect();

    let order_side = |sign: Sign| {
        let mut idx: Vec<usize> = pairs
            .iter()
            .filter(|p| p.sign() == sign)
            .map(|p| p.index)
            .collect();
        idx.sort_by(|&a, &b| {
            pairs[a]
                .distance()
                .partial_cmp(&pairs[b].distance())
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        idx
    };
    let pos_order = order_side(Sign::Positive);
    let neg_order = order_side(Sign::Negative);

    let mut rank = vec![0; pairs.len()];
    for order in [&pos_order, &neg_order] {
        for (r, &idx) in order.iter().enumerate() {
            rank[idx] = r;
        }
    }

    let sorted = |sign: Sign, knock: bool| {
        let mut v: Vec<f64> = pairs
            .iter()
            .filter(|p| p.sign() == sign)
            .map(|p| if knock { p.knockoff.value() } else { p.q.value() })
            .collect();
        v.sort_by(f64::total_cmp);
        v
    };

    Ok(PairSet {
        pos_q: sorted(Sign::Positive, false),
        pos_ko: sorted(Sign::Positive, true),
        neg_q: sorted(Sign::Negative, false),
        neg_ko: sorted(Sign::Negative, true),
        pairs,
        pos_order,
        neg_order,
        rank,
    })
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn n_positive(&self) -> usize {
        self.pos_order.len()
    }

    pub fn n_negative(&self) -> usize {
        self.neg_order.len()
    }

    pub fn pairs(&self) -> &[SignedPair] {
        &self.pairs
    }

    pub fn pair(&self, index: usize) -> &SignedPair {
        &self.pairs[index]
    }

    /// Positive pair indices, closest to 1/2 first.
    pub fn positive_order(&self) -> &[usize] {
        &self.pos_order
    }

    /// Negative pair indices, closest to -1/2 first.
    pub fn negative_order(&self) -> &[usize] {
        &self.neg_order
    }

    /// Zero-based rank of a pair within its own side.
    pub fn rank(&self, index: usize) -> usize {
        self.rank[index]
    }

    fn order(&self, side: Side) -> &[usize] {
        match side {
            Side::Positive => &self.pos_order,
            Side::Negative => &self.neg_order,
        }
    }

    /// Whether the pair is among the first `accepted_pos` / `accepted_neg` of its side.
    pub fn is_accepted(&self, index: usize, accepted_pos: usize, accepted_neg: usize) -> bool {
        let limit = match self.pairs[index].sign() {
            Sign::Positive => accepted_pos,
            Sign::Negative => accepted_neg,
        };
        self.rank[index] < limit
    }

    /// `(#{q in R}, #{knockoff in R})`.
    pub fn region_counts(&self, region: &RejectionRegion) -> (usize, usize) {
        let above = |v: &[f64]| v.len() - v.partition_point(|&x| x <= region.upper);
        let below = |v: &[f64]| v.partition_point(|&x| x < region.lower);
        (
            above(&self.pos_q) + below(&self.neg_q),
            above(&self.pos_ko) + below(&self.neg_ko),
        )
    }
}

/// `[-1, lower) ∪ (upper, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RejectionRegion {
    pub lower: f64,
    pub upper: f64,
    /// `1 + lower`, kept at full precision (the boundary pair's inner magnitude).
    pub lower_tail: f64,
    /// `1 - upper`, kept at full precision.
    pub upper_tail: f64,
}

impl RejectionRegion {
    pub fn contains(&self, q: f64) -> bool {
        q < self.lower || q > self.upper
    }
}

/// Region after accepting the `i` closest positive and `j` closest negative pairs.
///
/// A side with zero accepted pairs is reported as empty (`U = 1`, `L = -1`);
/// the procedure only does that when the side has no pairs at all.
pub fn region_for(pairs: &PairSet, i: usize, j: usize) -> Result<RejectionRegion> {
    if i > pairs.n_positive() || j > pairs.n_negative() {
        return Err(invalid(format!(
            "accepted counts ({i}, {j}) exceed side sizes ({}, {})",
            pairs.n_positive(),
            pairs.n_negative()
        )));
    }
    let (upper, upper_tail) = if i == 0 {
        (1.0, 0.0)
    } else {
        let p = &pairs.pairs[pairs.pos_order[i - 1]];
        (p.outer(), p.inner())
    };
    let (lower, lower_tail) = if j == 0 {
        (-1.0, 0.0)
    } else {
        let p = &pairs.pairs[pairs.neg_order[j - 1]];
        (-p.outer(), p.inner())
    };
    Ok(RejectionRegion {
        lower,
        upper,
        lower_tail,
        upper_tail,
    })
}

/// `(1 + #{knockoff in R}) / max(#{q in R}, 1)`.
pub fn fdr_hat(pairs: &PairSet, region: &RejectionRegion) -> f64 {
    let (hits, knock) = pairs.region_counts(region);
    (1 + knock) as f64 / hits.max(1) as f64
}

/// What a side-selection rule is allowed to see about one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedPair {
    pub index: usize,
    pub sign: Sign,
    /// Smaller magnitude of the two elements.
    pub inner: f64,
    /// Larger magnitude of the two elements.
    pub outer: f64,
    pub distance: f64,
    /// `b` for accepted pairs only.
    pub revealed: Option<bool>,
}

impl MaskedPair {
    /// `min(q, knockoff)`.
    pub fn low(&self) -> f64 {
        match self.sign {
            Sign::Positive => self.inner,
            Sign::Negative => -self.outer,
        }
    }

    /// Both candidate values, the one farther from zero first.
    pub fn candidates(&self) -> [SignedPValue; 2] {
        let far = SignedPValue::from_parts(self.sign, self.outer, self.inner);
        [far, far.knockoff()]
    }

    /// The true signed p-value once revealed.
    pub fn true_value(&self) -> Option<SignedPValue> {
        let [far, near] = self.candidates();
        self.revealed.map(|b| if b { far } else { near })
    }
}

/// The masked filtration at one step: all unordered pairs plus the identities
/// of accepted ones. Cheap to construct; it borrows the pair set.
#[derive(Clone, Copy)]
pub struct MaskedView<'a> {
    pairs: &'a PairSet,
    accepted_pos: usize,
    accepted_neg: usize,
}

impl<'a> MaskedView<'a> {
    pub fn new(pairs: &'a PairSet, accepted_pos: usize, accepted_neg: usize) -> Result<Self> {
        if accepted_pos > pairs.n_positive() || accepted_neg > pairs.n_negative() {
            return Err(invalid("accepted counts exceed side sizes"));
        }
        Ok(Self {
            pairs,
            accepted_pos,
            accepted_neg,
        })
    }

    /// View with every pair accepted.
    pub fn fully_revealed(pairs: &'a PairSet) -> Self {
        Self {
            pairs,
            accepted_pos: pairs.n_positive(),
            accepted_neg: pairs.n_negative(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn n_positive(&self) -> usize {
        self.pairs.n_positive()
    }

    pub fn n_negative(&self) -> usize {
        self.pairs.n_negative()
    }

    pub fn accepted_positive(&self) -> usize {
        self.accepted_pos
    }

    pub fn accepted_negative(&self) -> usize {
        self.accepted_neg
    }

    /// Shrinkage steps taken so far.
    pub fn step(&self) -> usize {
        let start = self.n_positive().min(1) + self.n_negative().min(1);
        (self.accepted_pos + self.accepted_neg).saturating_sub(start)
    }

    pub fn is_accepted(&self, index: usize) -> bool {
        self.pairs
            .is_accepted(index, self.accepted_pos, self.accepted_neg)
    }

    pub fn entry(&self, index: usize) -> MaskedPair {
        let p = &self.pairs.pairs[index];
        MaskedPair {
            index,
            sign: p.sign(),
            inner: p.inner(),
            outer: p.outer(),
            distance: p.distance(),
            revealed: self.is_accepted(index).then(|| p.b()),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = MaskedPair> + '_ {
        (0..self.len()).map(move |i| self.entry(i))
    }

    /// The next pair that shrinking on `side` would accept.
    pub fn next(&self, side: Side) -> Option<MaskedPair> {
        let taken = match side {
            Side::Positive => self.accepted_pos,
            Side::Negative => self.accepted_neg,
        };
        self.pairs.order(side).get(taken).map(|&i| self.entry(i))
    }
}

impl PartialEq for MaskedView<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.accepted_pos == other.accepted_pos
            && self.accepted_neg == other.accepted_neg
            && self.len() == other.len()
            && self.entries().eq(other.entries())
    }
}

impl fmt::Debug for MaskedView<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MaskedView")
            .field("n", &self.len())
            .field("accepted_pos", &self.accepted_pos)
            .field("accepted_neg", &self.accepted_neg)
            .finish()
    }
}

/// Chooses the side to shrink from masked information only.
pub trait SideStrategy {
    fn choose(&mut self, view: &MaskedView<'_>) -> Side;
}

impl<F> SideStrategy for F
where
    F: FnMut(&MaskedView<'_>) -> Side,
{
    fn choose(&mut self, view: &MaskedView<'_>) -> Side {
        self(view)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    FdrThreshold,
    Exhaustion,
}

/// Counters and region after `k` shrinkage steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcedureState {
    pub k: usize,
    pub accepted_pos: usize,
    pub accepted_neg: usize,
    pub region: RejectionRegion,
    pub fdr_hat_trace: Vec<f64>,
}

impl ProcedureState {
    pub fn accepted_indices(&self, pairs: &PairSet) -> Vec<usize> {
        let mut v: Vec<usize> = pairs.pos_order[..self.accepted_pos]
            .iter()
            .chain(&pairs.neg_order[..self.accepted_neg])
            .copied()
            .collect();
        v.sort_unstable();
        v
    }

    pub fn unaccepted_indices(&self, pairs: &PairSet) -> Vec<usize> {
        (0..pairs.len())
            .filter(|&i| !pairs.is_accepted(i, self.accepted_pos, self.accepted_neg))
            .collect()
    }

    pub fn is_exhausted(&self, pairs: &PairSet) -> bool {
        self.accepted_pos == pairs.n_positive() && self.accepted_neg == pairs.n_negative()
    }
}

pub fn masked_view<'a>(pairs: &'a PairSet, state: &ProcedureState) -> MaskedView<'a> {
    MaskedView {
        pairs,
        accepted_pos: state.accepted_pos,
        accepted_neg: state.accepted_neg,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureResult {
    /// Rejected hypothesis indices, ascending.
    pub rejected: Vec<usize>,
    pub region: RejectionRegion,
    pub stopped_by: StopReason,
    pub fdr_hat_trace: Vec<f64>,
    pub rejected_negative: usize,
    pub rejected_positive: usize,
    pub accepted_positive: usize,
    pub accepted_negative: usize,
    /// Side shrunk at each step.
    pub steps: Vec<Side>,
}

/// Step-by-step driver. [`run`] is the usual entry point; this exists so
/// callers can inspect every intermediate state.
#[derive(Debug)]
pub struct Shrinkage<'a> {
    pairs: &'a PairSet,
    alpha: f64,
    state: ProcedureState,
    steps: Vec<Side>,
    stopped: Option<StopReason>,
}

impl<'a> Shrinkage<'a> {
    pub fn new(pairs: &'a PairSet, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if pairs.is_empty() {
            return Err(Error::Empty("no pairs"));
        }
        let i0 = pairs.n_positive().min(1);
        let j0 = pairs.n_negative().min(1);
        let region = region_for(pairs, i0, j0)?;
        let mut s = Self {
            pairs,
            alpha,
            state: ProcedureState {
                k: 0,
                accepted_pos: i0,
                accepted_neg: j0,
                region,
                fdr_hat_trace: Vec::new(),
            },
            steps: Vec::new(),
            stopped: None,
        };
        s.evaluate();
        Ok(s)
    }

    fn evaluate(&mut self) {
        let f = fdr_hat(self.pairs, &self.state.region);
        self.state.fdr_hat_trace.push(f);
        if f <= self.alpha {
            self.stopped = Some(StopReason::FdrThreshold);
        } else if self.state.is_exhausted(self.pairs) {
            self.stopped = Some(StopReason::Exhaustion);
        }
    }

    pub fn state(&self) -> &ProcedureState {
        &self.state
    }

    pub fn pairs(&self) -> &'a PairSet {
        self.pairs
    }

    pub fn stopped(&self) -> Option<StopReason> {
        self.stopped
    }

    pub fn view(&self) -> MaskedView<'a> {
        masked_view(self.pairs, &self.state)
    }

    /// The side dictated by the boundary rule, if one side is exhausted.
    pub fn forced_side(&self) -> Option<Side> {
        if self.state.accepted_neg == self.pairs.n_negative() {
            Some(Side::Positive)
        } else if self.state.accepted_pos == self.pairs.n_positive() {
            Some(Side::Negative)
        } else {
            None
        }
    }

    /// Accepts the next pair on `side` and re-evaluates the stopping rule.
    pub fn advance(&mut self, side: Side) -> Result<()> {
        if self.stopped.is_some() {
            return Err(invalid("procedure already stopped"));
        }
        if let Some(forced) = self.forced_side() {
            if forced != side {
                return Err(invalid(format!("{side} side is exhausted")));
            }
        }
        match side {
            Side::Positive => self.state.accepted_pos += 1,
            Side::Negative => self.state.accepted_neg += 1,
        }
        self.state.k += 1;
        self.state.region = region_for(self.pairs, self.state.accepted_pos, self.state.accepted_neg)?;
        self.steps.push(side);
        self.evaluate();
        Ok(())
    }

    /// One shrinkage step; the strategy is consulted only when both sides have pairs left.
    pub fn step_with<S: SideStrategy + ?Sized>(&mut self, strategy: &mut S) -> Result<Side> {
        let side = match self.forced_side() {
            Some(s) => s,
            None => strategy.choose(&self.view()),
        };
        self.advance(side)?;
        Ok(side)
    }

    pub fn finish(self) -> ProcedureResult {
        let stopped_by = self.stopped.unwrap_or(StopReason::Exhaustion);
        let region = self.state.region;
        let rejected: Vec<usize> = match stopped_by {
            StopReason::FdrThreshold => self
                .pairs
                .pairs
                .iter()
                .filter(|p| region.contains(p.q.value()))
                .map(|p| p.index)
                .collect(),
            StopReason::Exhaustion => Vec::new(),
        };
        let rejected_negative = rejected
            .iter()
            .filter(|&&i| self.pairs.pairs[i].sign() == Sign::Negative)
            .count();
        ProcedureResult {
            rejected_positive: rejected.len() - rejected_negative,
            rejected_negative,
            rejected,
            region,
            stopped_by,
            fdr_hat_trace: self.state.fdr_hat_trace,
            accepted_positive: self.state.accepted_pos,
            accepted_negative: self.state.accepted_neg,
            steps: self.steps,
        }
    }
}

/// Runs the procedure to completion.
pub fn run<S: SideStrategy + ?Sized>(
    pairs: &PairSet,
    strategy: &mut S,
    alpha: f64,
) -> Result<ProcedureResult> {
    let mut sh = Shrinkage::new(pairs, alpha)?;
    while sh.stopped().is_none() {
        sh.step_with(strategy)?;
    }
    Ok(sh.finish())
}
