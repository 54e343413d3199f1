//! Two-group model on signed p-values and its masked-data EM fit.
//!
//! The null density is uniform on `(-1, 1)`. The alternative is a mixture of
//! a decreasing transformed `Beta(a, 1)` on the left and an increasing
//! transformed `Beta(b, 1)` on the right:
//!
//! ```text
//! f1(q) = λ (a/2) ((q+1)/2)^(a-1) + (1-λ) (b/2) ((1-q)/2)^(b-1)
//! ```
//!
//! A masked pair `{q, q̃}` has density `π0 + (1-π0) (f1(q) + f1(q̃))`.
//! The EM treats the null status, the alternative component and (for masked
//! pairs) which element is the true value as latent. Both shape updates are
//! closed-form weighted `Beta(·, 1)` maximum-likelihood estimates, clamped to
//! `[1e-4, 1]`.
//!
//! Everything is evaluated in log space from `ln((x+1)/2)` and `ln((1-x)/2)`,
//! which are computed from the stored complement so values within rounding of
//! `±1` stay finite.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::procedure::{MaskedPair, MaskedView};
use crate::stats::{Sign, SignedPValue};

/// Lower clamp for both shape parameters.
pub const MIN_SHAPE: f64 = 1e-4;

const LN_2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub pi0: f64,
    pub lambda: f64,
    /// Shape of the left (negative-signal) component.
    pub shape_left: f64,
    /// Shape of the right (positive-signal) component.
    pub shape_right: f64,
}

impl MixtureParams {
    pub fn new(pi0: f64, lambda: f64, shape_left: f64, shape_right: f64) -> Result<Self> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let shape = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(pi0) || !unit(lambda) || !shape(shape_left) || !shape(shape_right) {
            return Err(invalid(format!(
                "mixture parameters out of range: pi0={pi0}, lambda={lambda}, shapes=({shape_left}, {shape_right})"
            )));
        }
        Ok(Self {
            pi0,
            lambda,
            shape_left,
            shape_right,
        })
    }

    /// Starting point: `π0 = 0.9`, shapes `0.3`, and `λ` the share of negative
    /// pairs among pairs farther than 0.25 from `±1/2`.
    pub fn initial_guess(view: &MaskedView<'_>) -> Self {
        let (far, far_neg) = view
            .entries()
            .filter(|e| e.distance > 0.25)
            .fold((0usize, 0usize), |(a, b), e| {
                (a + 1, b + usize::from(e.sign == Sign::Negative))
            });
        let lambda = if far == 0 { 0.5 } else { far_neg as f64 / far as f64 };
        Self {
            pi0: 0.9,
            lambda,
            shape_left: 0.3,
            shape_right: 0.3,
        }
    }
}

/// `ln((x+1)/2)` and `ln((1-x)/2)` for one candidate value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    log_left: f64,
    log_right: f64,
}

impl Point {
    pub fn of(v: SignedPValue) -> Self {
        let near_end = (0.5 * v.complement()).max(f64::MIN_POSITIVE).ln();
        let far_end = (0.5 * (1.0 + v.magnitude())).ln();
        match v.sign() {
            Sign::Positive => Self {
                log_left: far_end,
                log_right: near_end,
            },
            Sign::Negative => Self {
                log_left: near_end,
                log_right: far_end,
            },
        }
    }
}

/// Log densities of the two alternative components and of the mixture weights.
#[derive(Debug, Clone, Copy)]
struct LogParams {
    ln_null_half: f64,
    ln_null: f64,
    ln_left_w: f64,
    ln_right_w: f64,
    a: f64,
    b: f64,
    ln_a_half: f64,
    ln_b_half: f64,
}

impl LogParams {
    fn new(p: &MixtureParams) -> Self {
        let ln_alt = (1.0 - p.pi0).ln();
        Self {
            ln_null: p.pi0.ln(),
            ln_null_half: p.pi0.ln() - LN_2,
            ln_left_w: ln_alt + p.lambda.ln(),
            ln_right_w: ln_alt + (1.0 - p.lambda).ln(),
            a: p.shape_left,
            b: p.shape_right,
            ln_a_half: (p.shape_left / 2.0).ln(),
            ln_b_half: (p.shape_right / 2.0).ln(),
        }
    }

    /// `ln[(1-π0) λ fL(x)]`, `ln[(1-π0)(1-λ) fR(x)]`.
    fn alt_terms(&self, x: &Point) -> (f64, f64) {
        (
            self.ln_left_w + self.ln_a_half + (self.a - 1.0) * x.log_left,
            self.ln_right_w + self.ln_b_half + (self.b - 1.0) * x.log_right,
        )
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

fn check_open(q: f64) -> Result<()> {
    if !(q.abs() < 1.0) {
        return Err(invalid(format!("density needs |q| < 1, got {q}")));
    }
    Ok(())
}

/// Alternative density `f1(q)`.
pub fn f1_density(q: f64, params: &MixtureParams) -> Result<f64> {
    check_open(q)?;
    let (a, b, lam) = (params.shape_left, params.shape_right, params.lambda);
    let left = if lam > 0.0 {
        lam * a / 2.0 * ((q + 1.0) / 2.0).powf(a - 1.0)
    } else {
        0.0
    };
    let right = if lam < 1.0 {
        (1.0 - lam) * b / 2.0 * ((1.0 - q) / 2.0).powf(b - 1.0)
    } else {
        0.0
    };
    Ok(left + right)
}

fn check_pair(q: f64, q_tilde: f64) -> Result<()> {
    check_open(q)?;
    check_open(q_tilde)?;
    let sign = if q > 0.0 { 1.0 } else { -1.0 };
    if q == 0.0 || q_tilde == 0.0 || q.signum() != q_tilde.signum() || (q + q_tilde - sign).abs() > 1e-12 {
        return Err(invalid(format!("{{{q}, {q_tilde}}} is not a knockoff pair")));
    }
    Ok(())
}

/// Density of the unordered pair `{q, q̃}`.
pub fn pair_density(q: f64, q_tilde: f64, params: &MixtureParams) -> Result<f64> {
    check_pair(q, q_tilde)?;
    let alt = 1.0 - params.pi0;
    Ok(params.pi0 + alt * f1_density(q, params)? + alt * f1_density(q_tilde, params)?)
}

/// Local FDR of an unordered pair, `π0 / f({q, q̃})`.
pub fn lfdr_pair(q: f64, q_tilde: f64, params: &MixtureParams) -> Result<f64> {
    let f = pair_density(q, q_tilde, params)?;
    Ok(if params.pi0 == 0.0 { 0.0 } else { params.pi0 / f })
}

/// Local FDR of a masked pair, computed in log space.
pub fn lfdr_masked(pair: &MaskedPair, params: &MixtureParams) -> f64 {
    if params.pi0 == 0.0 {
        return 0.0;
    }
    let lp = LogParams::new(params);
    let [u, v] = pair.candidates().map(Point::of);
    (lp.ln_null - masked_log_density(&lp, &u, &v)).exp()
}

fn masked_log_density(lp: &LogParams, u: &Point, v: &Point) -> f64 {
    let (ul, ur) = lp.alt_terms(u);
    let (vl, vr) = lp.alt_terms(v);
    log_sum_exp(&[lp.ln_null, ul, ur, vl, vr])
}

fn revealed_log_density(lp: &LogParams, x: &Point) -> f64 {
    let (l, r) = lp.alt_terms(x);
    log_sum_exp(&[lp.ln_null_half, l, r])
}

/// Observed data for the EM: revealed values and masked pairs.
#[derive(Debug, Clone, Default)]
pub struct EmData {
    revealed: Vec<Point>,
    masked: Vec<[Point; 2]>,
}

impl EmData {
    pub fn from_view(view: &MaskedView<'_>) -> Self {
        let mut data = Self::default();
        for e in view.entries() {
            match e.true_value() {
                Some(v) => data.revealed.push(Point::of(v)),
                None => data.masked.push(e.candidates().map(Point::of)),
            }
        }
        data
    }

    /// Revealed values plus masked pairs given by either of their elements.
    pub fn new(revealed: &[SignedPValue], masked: &[SignedPValue]) -> Self {
        Self {
            revealed: revealed.iter().copied().map(Point::of).collect(),
            masked: masked
                .iter()
                .map(|&q| [Point::of(q), Point::of(q.knockoff())])
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.revealed.len() + self.masked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn log_likelihood(&self, params: &MixtureParams) -> f64 {
        let lp = LogParams::new(params);
        let r: f64 = self.revealed.iter().map(|x| revealed_log_density(&lp, x)).sum();
        let m: f64 = self
            .masked
            .iter()
            .map(|[u, v]| masked_log_density(&lp, u, v))
            .sum();
        r + m
    }

    /// E-step at `params`: returns the log-likelihood at `params` and the
    /// expected sufficient statistics.
    fn expect(&self, params: &MixtureParams) -> (f64, Suff) {
        let lp = LogParams::new(params);
        let mut s = Suff::default();
        let mut ll = 0.0;
        for x in &self.revealed {
            let (l, r) = lp.alt_terms(x);
            let d = log_sum_exp(&[lp.ln_null_half, l, r]);
            ll += d;
            s.null += (lp.ln_null_half - d).exp();
            s.add_left((l - d).exp(), x);
            s.add_right((r - d).exp(), x);
        }
        for [u, v] in &self.masked {
            let (ul, ur) = lp.alt_terms(u);
            let (vl, vr) = lp.alt_terms(v);
            let d = log_sum_exp(&[lp.ln_null, ul, ur, vl, vr]);
            ll += d;
            s.null += (lp.ln_null - d).exp();
            s.add_left((ul - d).exp(), u);
            s.add_left((vl - d).exp(), v);
            s.add_right((ur - d).exp(), u);
            s.add_right((vr - d).exp(), v);
        }
        (ll, s)
    }

    fn maximize(&self, s: &Suff, prev: &MixtureParams) -> MixtureParams {
        let n = self.len() as f64;
        let alt = s.left_w + s.right_w;
        MixtureParams {
            pi0: (s.null / n).clamp(0.0, 1.0),
            lambda: if alt > 0.0 { s.left_w / alt } else { prev.lambda },
            shape_left: shape_update(s.left_w, s.left_log, prev.shape_left),
            shape_right: shape_update(s.right_w, s.right_log, prev.shape_right),
        }
    }

    pub fn fit(&self, init: MixtureParams, max_iter: usize, tol: f64) -> Result<EmReport> {
        if self.is_empty() {
            return Err(Error::Empty("EM needs at least one observation"));
        }
        let mut params = init;
        let (mut ll, mut suff) = self.expect(&params);
        if !ll.is_finite() {
            return Err(Error::Em(format!("non-finite log-likelihood {ll} at initial parameters {params:?}")));
        }
        let mut trace = vec![ll];
        let mut converged = false;
        let mut iterations = 0;
        for it in 1..=max_iter {
            params = self.maximize(&suff, &params);
            let (next_ll, next_suff) = self.expect(&params);
            if !next_ll.is_finite() {
                return Err(Error::Em(format!("non-finite log-likelihood {next_ll} after iteration {it} at {params:?}")));
            }
            trace.push(next_ll);
            iterations = it;
            suff = next_suff;
            let delta = (next_ll - ll).abs();
            ll = next_ll;
            if delta < tol {
                converged = true;
                break;
            }
        }
        Ok(EmReport {
            params,
            loglik_trace: trace,
            iterations,
            converged,
        })
    }
}

#[derive(Debug, Default)]
struct Suff {
    null: f64,
    left_w: f64,
    left_log: f64,
    right_w: f64,
    right_log: f64,
}

impl Suff {
    fn add_left(&mut self, w: f64, x: &Point) {
        self.left_w += w;
        self.left_log += w * x.log_left;
    }

    fn add_right(&mut self, w: f64, x: &Point) {
        self.right_w += w;
        self.right_log += w * x.log_right;
    }
}

/// Maximizer of `Σ w (ln s + (s-1) ln u)` over `s ∈ [1e-4, 1]`, given
/// `W = Σ w` and `Σ w ln u`. Falls back to `previous` when the weights carry no information.
pub fn shape_update(weight_sum: f64, weighted_log_sum: f64, previous: f64) -> f64 {
    if weight_sum > 0.0 && weighted_log_sum < 0.0 {
        (-weight_sum / weighted_log_sum).clamp(MIN_SHAPE, 1.0)
    } else {
        previous
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmReport {
    pub params: MixtureParams,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Masked log-likelihood: revealed values contribute `ln(π0/2 + (1-π0) f1(q))`,
/// masked pairs `ln f({q, q̃})`.
pub fn log_likelihood(view: &MaskedView<'_>, params: &MixtureParams) -> f64 {
    EmData::from_view(view).log_likelihood(params)
}

pub fn fit_em(
    view: &MaskedView<'_>,
    init: MixtureParams,
    max_iter: usize,
    tol: f64,
) -> Result<EmReport> {
    EmData::from_view(view).fit(init, max_iter, tol)
}
