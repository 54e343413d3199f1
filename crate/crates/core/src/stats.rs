//! Special functions, p-values, signed p-values and knockoffs.
//!
//! A signed p-value is stored as a sign together with its magnitude `|q|`
//! and the complement `1 - |q|`. When the value comes from a p-value the
//! complement *is* the p-value, so tails near `±1` keep full relative
//! precision and the knockoff (which swaps magnitude and complement) is an
//! exact involution.

use serde::{Deserialize, Serialize};
use statrs::function::beta::checked_beta_reg;
use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{invalid, Result};

/// Direction of a test statistic or signed p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Negative,
    Positive,
}

impl Sign {
    pub fn of(x: f64) -> Sign {
        if x < 0.0 {
            Sign::Negative
        } else {
            Sign::Positive
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Negative => -1.0,
            Sign::Positive => 1.0,
        }
    }
}

/// A test statistic with an optional t reference distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestStatistic {
    pub value: f64,
    /// Degrees of freedom; `None` means a standard normal reference.
    pub df: Option<f64>,
}

impl TestStatistic {
    pub fn new(value: f64, df: Option<f64>) -> Result<Self> {
        if !value.is_finite() {
            return Err(invalid(format!("statistic must be finite, got {value}")));
        }
        if let Some(d) = df {
            if !(d > 0.0) || !d.is_finite() {
                return Err(invalid(format!("degrees of freedom must be positive, got {d}")));
            }
        }
        Ok(Self { value, df })
    }

    pub fn normal(value: f64) -> Result<Self> {
        Self::new(value, None)
    }

    pub fn t(value: f64, df: f64) -> Result<Self> {
        Self::new(value, Some(df))
    }
}

/// Signed p-value `q = sign(t)(1 - p)` in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedPValue {
    sign: Sign,
    magnitude: f64,
    complement: f64,
}

impl SignedPValue {
    /// Builds from a raw value. Zero has no sign; use [`SignedPValue::with_sign`].
    pub fn new(q: f64) -> Result<Self> {
        if q.is_nan() || q.abs() > 1.0 {
            return Err(invalid(format!("signed p-value must lie in [-1, 1], got {q}")));
        }
        if q == 0.0 {
            return Err(invalid("signed p-value 0 has no sign"));
        }
        Ok(Self::with_sign(Sign::of(q), q.abs()))
    }

    /// Builds from an explicit sign and magnitude `|q|` in `[0, 1]`.
    pub fn with_sign(sign: Sign, magnitude: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&magnitude));
        Self {
            sign,
            magnitude,
            complement: 1.0 - magnitude,
        }
    }

    /// Builds from a sign and p-value, keeping `p` exactly as the complement.
    pub fn from_p(sign: Sign, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid(format!("p-value must lie in [0, 1], got {p}")));
        }
        Ok(Self {
            sign,
            magnitude: 1.0 - p,
            complement: p,
        })
    }

    pub fn value(&self) -> f64 {
        self.sign.as_f64() * self.magnitude
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    /// `|q|`.
    pub fn magnitude(&self) -> f64 {
        self.magnitude
    }

    /// `1 - |q|`, i.e. the two-sided p-value when built with [`SignedPValue::from_p`].
    pub fn complement(&self) -> f64 {
        self.complement
    }

    pub(crate) fn from_parts(sign: Sign, magnitude: f64, complement: f64) -> Self {
        Self {
            sign,
            magnitude,
            complement,
        }
    }

    /// `sign(q) - q`; swaps magnitude and complement.
    pub fn knockoff(&self) -> Self {
        Self {
            sign: self.sign,
            magnitude: self.complement,
            complement: self.magnitude,
        }
    }

    /// Distance of `q` (and of its knockoff) to `±1/2`.
    pub fn distance_to_half(&self) -> f64 {
        self.magnitude.max(self.complement) - 0.5
    }
}

/// `sign(q) - q` on raw values. Undefined at zero.
pub fn knockoff(q: f64) -> Result<f64> {
    if q == 0.0 {
        return Err(invalid("knockoff of a zero signed p-value is undefined"));
    }
    Ok(SignedPValue::new(q)?.knockoff().value())
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) || !(a > 0.0) || !(b > 0.0) || !a.is_finite() || !b.is_finite()
    {
        return Err(invalid(format!("incomplete beta outside domain: x={x}, a={a}, b={b}")));
    }
    checked_beta_reg(a, b, x).map_err(|e| invalid(format!("incomplete beta: {e}")))
}

fn check_df(df: f64) -> Result<()> {
    if !(df > 0.0) || !df.is_finite() {
        return Err(invalid(format!("degrees of freedom must be positive, got {df}")));
    }
    Ok(())
}

/// `P(|T| > |t|)` for a central t with `df` degrees of freedom.
fn t_two_sided_tail(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let x = df / (df + t * t);
    // arguments are in-domain by construction
    checked_beta_reg(df / 2.0, 0.5, x).unwrap_or(if x > 0.5 { 1.0 } else { 0.0 })
}

/// Central t CDF.
pub fn t_cdf(t: f64, df: f64) -> Result<f64> {
    check_df(df)?;
    if t.is_nan() {
        return Err(invalid("t statistic is NaN"));
    }
    let tail = 0.5 * t_two_sided_tail(t, df);
    Ok(if t > 0.0 { 1.0 - tail } else { tail })
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("normal quantile needs p in (0, 1), got {p}")));
    }
    Ok(-std::f64::consts::SQRT_2 * erfc_inv(2.0 * p))
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `p = 2(1 - F(|t|))`, evaluated through the upper tail directly.
pub fn two_sided_p(stat: &TestStatistic) -> f64 {
    let p = match stat.df {
        Some(df) => t_two_sided_tail(stat.value, df),
        None => erfc(stat.value.abs() / std::f64::consts::SQRT_2),
    };
    p.clamp(0.0, 1.0)
}

/// Inverse of [`two_sided_p`] in `|t|`: the statistic magnitude whose two-sided p-value is `p`.
pub fn statistic_for_p(p: f64, df: Option<f64>) -> f64 {
    if p >= 1.0 {
        return 0.0;
    }
    if p <= 0.0 {
        return f64::INFINITY;
    }
    match df {
        None => std::f64::consts::SQRT_2 * erfc_inv(p),
        Some(df) => {
            let mut hi = 1.0;
            while t_two_sided_tail(hi, df) > p {
                hi *= 2.0;
                if !hi.is_finite() {
                    return f64::INFINITY;
                }
            }
            let mut lo = 0.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid == lo || mid == hi {
                    break;
                }
                if t_two_sided_tail(mid, df) > p {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        }
    }
}

/// `q = sign(t)(1 - p)`. A statistic of exactly zero is given sign `+`.
pub fn signed_p(stat: &TestStatistic, p: f64) -> Result<SignedPValue> {
    // p = 0 only arises from tail underflow; it maps to q = ±1
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("p-value must lie in (0, 1], got {p}")));
    }
    if stat.value == 0.0 {
        log::warn!("test statistic is exactly zero; assigning positive sign");
    }
    SignedPValue::from_p(Sign::of(stat.value), p)
}

/// Signed p-value straight from a statistic.
pub fn signed_p_of(stat: &TestStatistic) -> Result<SignedPValue> {
    signed_p(stat, two_sided_p(stat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn incomplete_beta_special_cases() {
        assert_eq!(regularized_incomplete_beta(0.0, 2.5, 0.7).unwrap(), 0.0);
        assert_eq!(regularized_incomplete_beta(1.0, 2.5, 0.7).unwrap(), 1.0);
        assert_abs_diff_eq!(regularized_incomplete_beta(0.5, 1.0, 1.0).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(regularized_incomplete_beta(0.5, 2.0, 2.0).unwrap(), 0.5, epsilon = 1e-12);
        // I_x(a, 1) = x^a
        assert_abs_diff_eq!(regularized_incomplete_beta(0.3, 3.5, 1.0).unwrap(), 0.3f64.powf(3.5), epsilon = 1e-12);
        // I_x(1/2, 1/2) = (2/pi) asin(sqrt x)
        let arcsine = 2.0 / std::f64::consts::PI * 0.3f64.sqrt().asin();
        assert_abs_diff_eq!(regularized_incomplete_beta(0.3, 0.5, 0.5).unwrap(), arcsine, epsilon = 1e-10);
    }

    #[test]
    fn incomplete_beta_rejects_bad_domain() {
        assert!(regularized_incomplete_beta(-0.1, 1.0, 1.0).is_err());
        assert!(regularized_incomplete_beta(1.1, 1.0, 1.0).is_err());
        assert!(regularized_incomplete_beta(0.5, 0.0, 1.0).is_err());
        assert!(regularized_incomplete_beta(0.5, 1.0, -2.0).is_err());
    }

    #[test]
    fn t_cdf_values() {
        assert_eq!(t_cdf(0.0, 4.0).unwrap(), 0.5);
        assert_abs_diff_eq!(t_cdf(1.0, 1.0).unwrap(), 0.75, epsilon = 1e-10);
        assert!(t_cdf(1.0, 0.0).is_err());
        assert!(t_cdf(1.0, -3.0).is_err());
        for &t in &[0.3, 1.7, 4.2, 11.0] {
            let s = t_cdf(t, 3.5).unwrap() + t_cdf(-t, 3.5).unwrap();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn normal_cdf_quantile() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert_abs_diff_eq!(normal_quantile(0.5).unwrap(), 0.0, epsilon = 1e-15);
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
        assert!(normal_quantile(f64::NAN).is_err());
    }

    #[test]
    fn two_sided_p_edges() {
        assert_eq!(two_sided_p(&TestStatistic::t(0.0, 4.0).unwrap()), 1.0);
        let p = two_sided_p(&TestStatistic::t(2.776, 4.0).unwrap());
        assert_abs_diff_eq!(p, 0.05, epsilon = 1e-4);
        let p = two_sided_p(&TestStatistic::normal(1.959964).unwrap());
        assert_abs_diff_eq!(p, 0.05, epsilon = 1e-6);
        // deep tail keeps relative precision
        let p = two_sided_p(&TestStatistic::normal(20.0).unwrap());
        assert!(p > 0.0 && p < 1e-80);
    }

    #[test]
    fn signed_p_examples() {
        let t = TestStatistic::t(2.776, 4.0).unwrap();
        let q = signed_p(&t, two_sided_p(&t)).unwrap();
        assert_abs_diff_eq!(q.value(), 0.95, epsilon = 1e-4);

        let q = signed_p(&TestStatistic::t(-1.0, 4.0).unwrap(), 1.0).unwrap();
        assert_eq!(q.value(), 0.0);
        assert_eq!(q.sign(), Sign::Negative);

        let q = signed_p(&TestStatistic::t(-5.0, 4.0).unwrap(), 0.001).unwrap();
        assert_abs_diff_eq!(q.value(), -0.999, epsilon = 1e-15);

        let zero = signed_p_of(&TestStatistic::normal(0.0).unwrap()).unwrap();
        assert_eq!(zero.sign(), Sign::Positive);
        assert_eq!(zero.knockoff().value(), 1.0);
    }

    #[test]
    fn knockoff_examples() {
        assert_abs_diff_eq!(knockoff(0.8).unwrap(), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(knockoff(-0.25).unwrap(), -0.75, epsilon = 1e-15);
        assert_eq!(knockoff(0.5).unwrap(), 0.5);
        assert!(knockoff(0.0).is_err());
        assert!(SignedPValue::new(1.5).is_err());
    }

    #[test]
    fn statistic_for_p_inverts() {
        for &df in &[None, Some(4.0), Some(30.0)] {
            for &t in &[0.1, 1.0, 2.5, 7.0, 25.0] {
                let p = two_sided_p(&TestStatistic::new(t, df).unwrap());
                let back = statistic_for_p(p, df);
                assert!((back - t).abs() < 1e-7 * t.max(1.0), "df={df:?} t={t} back={back}");
            }
        }
    }
}
