//! Data generators and the Monte Carlo study runner.
//!
//! Two designs are supported: independent z statistics from a three-component
//! normal mixture, and blockwise-dependent two-sample t statistics where each
//! block of genes shares an AR(1) correlation across 3 + 3 subjects.
//!
//! Every replicate draws from its own ChaCha8 stream (`seed` picks the key,
//! the replicate number picks the stream), so a study is reproducible for any
//! degree of parallelism.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::baselines::{bh, oracle_procedure, ExternalProcedure, OracleTruth, ProcedureInput};
use crate::error::{invalid, Result};
use crate::parallel::map_indexed;
use crate::procedure::{build_pairs, run};
use crate::stats::{normal_quantile, signed_p, two_sided_p, t_cdf, Sign, SignedPValue, TestStatistic};
use crate::strategy::StrategyKind;

/// Ground truth for one hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Null,
    Down,
    Up,
}

impl Label {
    pub fn is_null(self) -> bool {
        self == Label::Null
    }

    fn draw(rng: &mut impl Rng, p1: f64, p2: f64) -> Self {
        let u: f64 = rng.random();
        if u < p1 {
            Label::Down
        } else if u < p1 + p2 {
            Label::Up
        } else {
            Label::Null
        }
    }
}

fn default_block() -> usize {
    20
}
fn default_rho() -> f64 {
    -0.7
}
fn default_group() -> usize {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalDesign {
    pub n: usize,
    pub p1: f64,
    pub p2: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub alpha: f64,
    pub reps: usize,
    pub seed: u64,
}

impl NormalDesign {
    /// `p2 = 0.2 - p1`, `μ = ∓3`, desk scale (n = 2000, 100 replicates).
    pub fn case_a(p1: f64, seed: u64) -> Self {
        Self { n: 2000, p1, p2: 0.2 - p1, mu1: -3.0, mu2: 3.0, alpha: 0.1, reps: 100, seed }
    }

    /// `p2 = 0.2 - p1`, `μ1 = -3`, `μ2 = 6`.
    pub fn case_b(p1: f64, seed: u64) -> Self {
        Self { mu2: 6.0, ..Self::case_a(p1, seed) }
    }

    /// `p1 = 0.18`, `p2 = 0.02`, `μ1 = -3`, varying `μ2`.
    pub fn case_c(mu2: f64, seed: u64) -> Self {
        Self { p1: 0.18, p2: 0.02, mu2, ..Self::case_a(0.18, seed) }
    }

    pub fn truth(&self) -> Result<OracleTruth> {
        OracleTruth::new(self.p1, self.p2, self.mu1, self.mu2)
    }

    pub fn validate(&self) -> Result<()> {
        self.truth()?;
        check_common(self.n, self.alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TDesign {
    pub n: usize,
    #[serde(default = "default_block")]
    pub block_size: usize,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_group")]
    pub n_treat: usize,
    #[serde(default = "default_group")]
    pub n_control: usize,
    pub p1: f64,
    pub p2: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub alpha: f64,
    pub reps: usize,
    pub seed: u64,
}

impl TDesign {
    /// Blocks of 20, `ρ = -0.7`, 3 vs 3 subjects, case (a) effects.
    pub fn case_a(p1: f64, seed: u64) -> Self {
        Self {
            n: 2000,
            block_size: 20,
            rho: -0.7,
            n_treat: 3,
            n_control: 3,
            p1,
            p2: 0.2 - p1,
            mu1: -3.0,
            mu2: 3.0,
            alpha: 0.1,
            reps: 100,
            seed,
        }
    }

    pub fn df(&self) -> f64 {
        (self.n_treat + self.n_control - 2) as f64
    }

    pub fn validate(&self) -> Result<()> {
        OracleTruth::new(self.p1, self.p2, self.mu1, self.mu2)?;
        check_common(self.n, self.alpha)?;
        if self.block_size == 0 || !self.n.is_multiple_of(self.block_size) {
            return Err(invalid(format!("block size {} must divide n = {}", self.block_size, self.n)));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(invalid(format!("need |rho| < 1, got {}", self.rho)));
        }
        if self.n_treat < 2 || self.n_control < 2 {
            return Err(invalid("each group needs at least 2 subjects"));
        }
        Ok(())
    }
}

fn check_common(n: usize, alpha: f64) -> Result<()> {
    if n == 0 {
        return Err(invalid("n must be positive"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// A study design as read from a config file; `design = "normal"` or `"dependent_t"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "snake_case")]
pub enum Design {
    Normal(NormalDesign),
    DependentT(TDesign),
}

impl Design {
    pub fn validate(&self) -> Result<()> {
        match self {
            Design::Normal(d) => d.validate(),
            Design::DependentT(d) => d.validate(),
        }
    }

    pub fn reps(&self) -> usize {
        match self {
            Design::Normal(d) => d.reps,
            Design::DependentT(d) => d.reps,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Design::Normal(d) => d.seed,
            Design::DependentT(d) => d.seed,
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            Design::Normal(d) => d.alpha,
            Design::DependentT(d) => d.alpha,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Design::Normal(d) => d.n,
            Design::DependentT(d) => d.n,
        }
    }

    pub fn set_reps(&mut self, reps: usize) {
        match self {
            Design::Normal(d) => d.reps = reps,
            Design::DependentT(d) => d.reps = reps,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            Design::Normal(d) => d.seed = seed,
            Design::DependentT(d) => d.seed = seed,
        }
    }

    pub fn set_n(&mut self, n: usize) {
        match self {
            Design::Normal(d) => d.n = n,
            Design::DependentT(d) => d.n = n,
        }
    }
}

/// Generator for replicate `rep` of a study seeded with `seed`.
pub fn replicate_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

pub fn gen_normal(design: &NormalDesign, rep: usize) -> (Vec<f64>, Vec<Label>) {
    let mut rng = replicate_rng(design.seed, rep);
    let mut z = Vec::with_capacity(design.n);
    let mut labels = Vec::with_capacity(design.n);
    for _ in 0..design.n {
        let label = Label::draw(&mut rng, design.p1, design.p2);
        let mean = match label {
            Label::Null => 0.0,
            Label::Down => design.mu1,
            Label::Up => design.mu2,
        };
        let e: f64 = rng.sample(StandardNormal);
        z.push(mean + e);
        labels.push(label);
    }
    (z, labels)
}

/// Lower Cholesky factor of the AR(1) correlation matrix `(ρ^|i-j|)`.
pub fn ar1_cholesky(size: usize, rho: f64) -> Result<DMatrix<f64>> {
    let sigma = DMatrix::from_fn(size, size, |i, j| rho.powi((i as i32 - j as i32).abs()));
    sigma
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| invalid(format!("AR(1) matrix with rho = {rho} is not positive definite")))
}

/// Pooled-variance two-sample t statistic, `mean(a) - mean(b)` on top.
pub fn two_sample_t(a: &[f64], b: &[f64]) -> f64 {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let ss = |v: &[f64], m: f64| v.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = (ss(a, ma) + ss(b, mb)) / (na + nb - 2.0);
    (ma - mb) / (pooled * (1.0 / na + 1.0 / nb)).sqrt()
}

pub fn gen_dependent_t(design: &TDesign, rep: usize) -> Result<(Vec<f64>, Vec<Label>)> {
    design.validate()?;
    let chol = ar1_cholesky(design.block_size, design.rho)?;
    let mut rng = replicate_rng(design.seed, rep);
    let subjects = design.n_treat + design.n_control;
    let b = design.block_size;
    let mut t = Vec::with_capacity(design.n);
    let mut labels = Vec::with_capacity(design.n);
    let mut expr = vec![DVector::<f64>::zeros(b); subjects];
    for _ in 0..design.n / b {
        for x in expr.iter_mut() {
            let e = DVector::from_fn(b, |_, _| rng.sample::<f64, _>(StandardNormal));
            *x = &chol * e;
        }
        for g in 0..b {
            let label = Label::draw(&mut rng, design.p1, design.p2);
            let effect = match label {
                Label::Null => 0.0,
                Label::Down => design.mu1,
                Label::Up => design.mu2,
            };
            let treat: Vec<f64> = expr[..design.n_treat].iter().map(|x| x[g] + effect).collect();
            let control: Vec<f64> = expr[design.n_treat..].iter().map(|x| x[g]).collect();
            t.push(two_sample_t(&treat, &control));
            labels.push(label);
        }
    }
    Ok((t, labels))
}

/// `Φ⁻¹(F_df(t))`, computed through the tail so large `|t|` keep precision.
pub fn t_to_z(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let tail = match t_cdf(-t.abs(), df) {
        Ok(p) => p,
        Err(_) => return f64::NAN,
    };
    let z = match normal_quantile(tail) {
        Ok(z) => -z,
        Err(_) => f64::INFINITY,
    };
    z.copysign(t)
}

/// A procedure evaluated in a study.
#[derive(Clone)]
pub enum ProcedureSpec {
    SignedKnockoff(StrategyKind),
    Bh,
    Oracle,
    External(Arc<dyn ExternalProcedure>),
}

impl ProcedureSpec {
    pub fn name(&self) -> String {
        match self {
            ProcedureSpec::SignedKnockoff(StrategyKind::Lfdr) => "sk".into(),
            ProcedureSpec::SignedKnockoff(k) => format!("sk-{}", k.name()),
            ProcedureSpec::Bh => "bh".into(),
            ProcedureSpec::Oracle => "orc".into(),
            ProcedureSpec::External(p) => p.name().to_string(),
        }
    }
}

impl fmt::Debug for ProcedureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl std::str::FromStr for ProcedureSpec {
    type Err = String;

    /// `sk`, `sk-<strategy>`, `bh`, `orc`.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sk" => Ok(ProcedureSpec::SignedKnockoff(StrategyKind::Lfdr)),
            "bh" => Ok(ProcedureSpec::Bh),
            "orc" | "oracle" => Ok(ProcedureSpec::Oracle),
            other => match other.strip_prefix("sk-") {
                Some(k) => k.parse().map(ProcedureSpec::SignedKnockoff),
                None => Err(format!("unknown procedure '{s}' (sk, sk-<strategy>, bh, orc)")),
            },
        }
    }
}

/// Realized outcome of one procedure on one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateMetrics {
    pub fdp: f64,
    pub power: f64,
    pub rejections: usize,
    pub rejected_negative: usize,
    pub rejected_positive: usize,
}

/// `FDP = #(rejected nulls) / max(#rejected, 1)`, power = share of non-nulls rejected.
pub fn score(rejected: &[usize], labels: &[Label], signs: &[Sign]) -> ReplicateMetrics {
    let false_hits = rejected.iter().filter(|&&i| labels[i].is_null()).count();
    let alternatives = labels.iter().filter(|l| !l.is_null()).count();
    let negative = rejected.iter().filter(|&&i| signs[i] == Sign::Negative).count();
    ReplicateMetrics {
        fdp: false_hits as f64 / rejected.len().max(1) as f64,
        power: (rejected.len() - false_hits) as f64 / alternatives.max(1) as f64,
        rejections: rejected.len(),
        rejected_negative: negative,
        rejected_positive: rejected.len() - negative,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub rep: usize,
    #[serde(flatten)]
    pub metrics: ReplicateMetrics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateError {
    pub rep: usize,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcedureSummary {
    pub name: String,
    /// Successful replicates, in replicate order.
    pub replicates: Vec<ReplicateRecord>,
    pub errors: Vec<ReplicateError>,
    pub mean_fdp: f64,
    pub mcse_fdp: f64,
    pub mean_power: f64,
    pub mcse_power: f64,
}

impl ProcedureSummary {
    pub fn fdp(&self) -> Vec<f64> {
        self.replicates.iter().map(|r| r.metrics.fdp).collect()
    }

    pub fn power(&self) -> Vec<f64> {
        self.replicates.iter().map(|r| r.metrics.power).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyResult {
    pub design: Design,
    pub seed: u64,
    pub reps: usize,
    pub procedures: Vec<ProcedureSummary>,
}

impl StudyResult {
    pub fn procedure(&self, name: &str) -> Option<&ProcedureSummary> {
        self.procedures.iter().find(|p| p.name == name)
    }
}

/// Mean and Monte Carlo standard error (`sd / sqrt(m)`).
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let m = values.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    if m == 1 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    (mean, (var / m as f64).sqrt())
}

/// One generated replicate, in every representation the procedures need.
pub struct Replicate {
    pub labels: Vec<Label>,
    pub p_values: Vec<f64>,
    pub z_values: Vec<f64>,
    pub q_values: Vec<SignedPValue>,
}

impl Replicate {
    pub fn signs(&self) -> Vec<Sign> {
        self.q_values.iter().map(|q| q.sign()).collect()
    }
}

pub fn generate(design: &Design, rep: usize) -> Result<Replicate> {
    let (stats, z_values, labels) = match design {
        Design::Normal(d) => {
            let (z, labels) = gen_normal(d, rep);
            let stats = z.iter().map(|&v| TestStatistic::normal(v)).collect::<Result<Vec<_>>>()?;
            (stats, z, labels)
        }
        Design::DependentT(d) => {
            let (t, labels) = gen_dependent_t(d, rep)?;
            let df = d.df();
            let z = t.iter().map(|&v| t_to_z(v, df)).collect();
            let stats = t.iter().map(|&v| TestStatistic::t(v, df)).collect::<Result<Vec<_>>>()?;
            (stats, z, labels)
        }
    };
    let p_values: Vec<f64> = stats.iter().map(two_sided_p).collect();
    let q_values = stats
        .iter()
        .zip(&p_values)
        .map(|(s, &p)| signed_p(s, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(Replicate { labels, p_values, z_values, q_values })
}

fn apply(spec: &ProcedureSpec, design: &Design, data: &Replicate) -> Result<Vec<usize>> {
    let alpha = design.alpha();
    match spec {
        ProcedureSpec::SignedKnockoff(kind) => {
            let pairs = build_pairs(&data.q_values)?;
            let mut strategy = kind.build(pairs.len());
            Ok(run(&pairs, &mut *strategy, alpha)?.rejected)
        }
        ProcedureSpec::Bh => Ok(bh(&data.p_values, alpha)),
        ProcedureSpec::Oracle => match design {
            Design::Normal(d) => Ok(oracle_procedure(&data.z_values, &d.truth()?, alpha)),
            Design::DependentT(_) => Err(invalid("the oracle procedure needs the independent normal design")),
        },
        ProcedureSpec::External(p) => p.select(&ProcedureInput {
            p_values: &data.p_values,
            z_values: &data.z_values,
            alpha,
        }),
    }
}

/// Runs every procedure on every replicate. A failing procedure on one
/// replicate is recorded and the study carries on.
pub fn run_study(design: &Design, procedures: &[ProcedureSpec], parallelism: usize) -> Result<StudyResult> {
    design.validate()?;
    if procedures.is_empty() {
        return Err(invalid("a study needs at least one procedure"));
    }
    if matches!(design, Design::DependentT(_)) && procedures.iter().any(|p| matches!(p, ProcedureSpec::Oracle)) {
        return Err(invalid("the oracle procedure needs the independent normal design"));
    }
    let reps = design.reps();
    let outcomes: Vec<Vec<std::result::Result<ReplicateMetrics, String>>> = map_indexed(reps, parallelism, |rep| {
        match generate(design, rep) {
            Ok(data) => {
                let signs = data.signs();
                procedures
                    .iter()
                    .map(|spec| {
                        apply(spec, design, &data)
                            .map(|rej| score(&rej, &data.labels, &signs))
                            .map_err(|e| e.to_string())
                    })
                    .collect()
            }
            Err(e) => vec![Err(format!("data generation failed: {e}")); procedures.len()],
        }
    });

    let summaries = procedures
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let mut replicates = Vec::new();
            let mut errors = Vec::new();
            for (rep, row) in outcomes.iter().enumerate() {
                match &row[k] {
                    Ok(m) => replicates.push(ReplicateRecord { rep, metrics: *m }),
                    Err(message) => errors.push(ReplicateError { rep, message: message.clone() }),
                }
            }
            let fdp: Vec<f64> = replicates.iter().map(|r| r.metrics.fdp).collect();
            let power: Vec<f64> = replicates.iter().map(|r| r.metrics.power).collect();
            let (mean_fdp, mcse_fdp) = mean_and_se(&fdp);
            let (mean_power, mcse_power) = mean_and_se(&power);
            ProcedureSummary {
                name: spec.name(),
                replicates,
                errors,
                mean_fdp,
                mcse_fdp,
                mean_power,
                mcse_power,
            }
        })
        .collect();

    Ok(StudyResult {
        design: *design,
        seed: design.seed(),
        reps,
        procedures: summaries,
    })
}
