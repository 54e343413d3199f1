//! Reference procedures: Benjamini–Hochberg and the oracle local-FDR rule.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::stats::normal_pdf;

/// True generating parameters of the three-component normal mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleTruth {
    pub p1: f64,
    pub p2: f64,
    pub mu1: f64,
    pub mu2: f64,
}

impl OracleTruth {
    pub fn new(p1: f64, p2: f64, mu1: f64, mu2: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p1) || !(0.0..=1.0).contains(&p2) || p1 + p2 > 1.0 {
            return Err(invalid(format!("bad proportions p1={p1}, p2={p2}")));
        }
        if !(mu1 < 0.0 && mu2 > 0.0) {
            return Err(invalid(format!("need mu1 < 0 < mu2, got {mu1}, {mu2}")));
        }
        Ok(Self { p1, p2, mu1, mu2 })
    }

    pub fn pi0(&self) -> f64 {
        1.0 - self.p1 - self.p2
    }
}

/// BH step-up: rejects the `k*` smallest p-values, `k* = max{k : p_(k) ≤ kα/n}`.
/// Returns indices in ascending order.
pub fn bh(p_values: &[f64], alpha: f64) -> Vec<usize> {
    let n = p_values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let cutoff = order
        .iter()
        .enumerate()
        .rev()
        .find(|&(k, &i)| p_values[i] <= (k + 1) as f64 * alpha / n as f64)
        .map_or(0, |(k, _)| k + 1);
    let mut out = order[..cutoff].to_vec();
    out.sort_unstable();
    out
}

/// `π0 φ(z) / (π0 φ(z) + p1 φ(z - μ1) + p2 φ(z - μ2))`.
pub fn oracle_lfdr(z: f64, truth: &OracleTruth) -> f64 {
    let null = truth.pi0() * normal_pdf(z);
    let alt = truth.p1 * normal_pdf(z - truth.mu1) + truth.p2 * normal_pdf(z - truth.mu2);
    if null + alt == 0.0 {
        // far tails: the alternative dominates
        return if truth.p1 + truth.p2 > 0.0 { 0.0 } else { 1.0 };
    }
    null / (null + alt)
}

/// Rejects the longest prefix of hypotheses sorted by local FDR whose running
/// mean stays at or below `alpha`.
pub fn lfdr_threshold(lfdr: &[f64], alpha: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..lfdr.len()).collect();
    order.sort_by(|&a, &b| lfdr[a].total_cmp(&lfdr[b]).then(a.cmp(&b)));
    let mut sum = 0.0;
    let mut take = 0;
    for (k, &i) in order.iter().enumerate() {
        sum += lfdr[i];
        if sum / (k + 1) as f64 <= alpha {
            take = k + 1;
        } else {
            break;
        }
    }
    let mut out = order[..take].to_vec();
    out.sort_unstable();
    out
}

/// Oracle procedure: local FDR from the true parameters, thresholded by running mean.
pub fn oracle_procedure(z_values: &[f64], truth: &OracleTruth, alpha: f64) -> Vec<usize> {
    let lfdr: Vec<f64> = z_values.iter().map(|&z| oracle_lfdr(z, truth)).collect();
    lfdr_threshold(&lfdr, alpha)
}

/// What an externally supplied procedure receives.
#[derive(Debug, Clone)]
pub struct ProcedureInput<'a> {
    pub p_values: &'a [f64],
    /// Test statistics on the z scale.
    pub z_values: &'a [f64],
    pub alpha: f64,
}

/// Hook for procedures defined elsewhere (weighted BH, right-boundary, ...).
pub trait ExternalProcedure: Send + Sync {
    fn name(&self) -> &str;
    /// Rejected indices.
    fn select(&self, input: &ProcedureInput<'_>) -> Result<Vec<usize>>;
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bh_examples() {
        assert_eq!(bh(&[0.001, 0.8, 0.9], 0.05), vec![0]);
        assert!(bh(&[1.0, 1.0, 1.0], 0.05).is_empty());
        assert_eq!(bh(&[0.02, 0.04], 0.05), vec![0, 1]);
        // step-up: a later passing rank pulls earlier ones in
        assert_eq!(bh(&[0.035, 0.03, 0.01, 0.5], 0.05), vec![0, 1, 2]);
        assert!(bh(&[], 0.1).is_empty());
    }

    #[test]
    fn oracle_lfdr_examples() {
        let null = OracleTruth { p1: 0.0, p2: 0.0, mu1: -3.0, mu2: 3.0 };
        for z in [-4.0, 0.0, 2.5] {
            assert_eq!(oracle_lfdr(z, &null), 1.0);
        }
        let sym = OracleTruth::new(0.1, 0.1, -3.0, 3.0).unwrap();
        for z in [0.3, 1.7, 3.2] {
            assert_abs_diff_eq!(oracle_lfdr(z, &sym), oracle_lfdr(-z, &sym), epsilon = 1e-15);
        }
        let phi0 = normal_pdf(0.0);
        let phi3 = normal_pdf(3.0);
        let expect = 0.8 * phi0 / (0.8 * phi0 + 0.2 * phi3);
        assert_abs_diff_eq!(oracle_lfdr(0.0, &sym), expect, epsilon = 1e-15);
        assert_abs_diff_eq!(expect, 0.997, epsilon = 5e-4);
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(lfdr_threshold(&[0.01, 0.05, 0.5], 0.1), vec![0, 1]);
        assert!(lfdr_threshold(&[0.3, 0.4], 0.1).is_empty());
    }

    #[test]
    fn truth_validation() {
        assert!(OracleTruth::new(0.6, 0.5, -1.0, 1.0).is_err());
        assert!(OracleTruth::new(0.1, 0.1, 1.0, 2.0).is_err());
    }
}
