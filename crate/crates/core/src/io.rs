//! Input tables, analysis reports and file formats.
//!
//! A statistics table is comma- or tab-delimited text with a header row. The
//! header decides the input mode:
//!
//! | columns           | meaning                                               |
//! |-------------------|-------------------------------------------------------|
//! | `id,stat[,df]`    | test statistic; `df` empty or absent means N(0, 1)    |
//! | `id,p,sign`       | two-sided p-value and direction (`+`/`-`, `1`/`-1`)   |
//!
//! Column names are case-insensitive; extra columns are ignored.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::baselines::{bh, ExternalProcedure, ProcedureInput};
use crate::error::{invalid, Error, Result};
use crate::mixture::{fit_em, MixtureParams};
use crate::parallel::map_indexed;
use crate::procedure::{build_pairs, run, MaskedView, PairSet, ProcedureResult, Side, StopReason};
use crate::simulation::{t_to_z, Design, ProcedureSpec, StudyResult};
use crate::stats::{normal_quantile, signed_p, statistic_for_p, two_sided_p, Sign, SignedPValue, TestStatistic};
use crate::strategy::{EmSettings, StrategyKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    Statistic,
    PValue,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation {
    Statistic(TestStatistic),
    PValue { p: f64, sign: Sign },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatRow {
    pub id: String,
    pub observation: Observation,
}

impl StatRow {
    pub fn p_value(&self) -> f64 {
        match self.observation {
            Observation::Statistic(s) => two_sided_p(&s),
            Observation::PValue { p, .. } => p,
        }
    }

    pub fn signed_p(&self) -> Result<SignedPValue> {
        match self.observation {
            Observation::Statistic(s) => signed_p(&s, two_sided_p(&s)),
            Observation::PValue { p, sign } => SignedPValue::from_p(sign, p),
        }
    }

    /// Degrees of freedom of the reference distribution; `None` for z scale.
    pub fn df(&self) -> Option<f64> {
        match self.observation {
            Observation::Statistic(s) => s.df,
            Observation::PValue { .. } => None,
        }
    }

    /// The statistic on the z scale.
    pub fn z_value(&self) -> f64 {
        match self.observation {
            Observation::Statistic(TestStatistic { value, df: None }) => value,
            Observation::Statistic(TestStatistic { value, df: Some(df) }) => t_to_z(value, df),
            Observation::PValue { p, sign } => {
                let z = if p <= 0.0 {
                    f64::INFINITY
                } else {
                    normal_quantile(p / 2.0).map_or(0.0, |q| -q)
                };
                sign.as_f64() * z
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatTable {
    pub mode: InputMode,
    pub rows: Vec<StatRow>,
}

impl StatTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn p_values(&self) -> Vec<f64> {
        self.rows.iter().map(StatRow::p_value).collect()
    }

    pub fn z_values(&self) -> Vec<f64> {
        self.rows.iter().map(StatRow::z_value).collect()
    }

    pub fn signed_p_values(&self) -> Result<Vec<SignedPValue>> {
        self.rows.iter().map(StatRow::signed_p).collect()
    }
}

fn parse_sign(s: &str) -> Option<Sign> {
    match s.to_ascii_lowercase().as_str() {
        "+" | "1" | "+1" | "1.0" | "pos" | "positive" | "up" => Some(Sign::Positive),
        "-" | "-1" | "-1.0" | "neg" | "negative" | "down" => Some(Sign::Negative),
        _ => None,
    }
}

fn parse_real(field: &str, what: &str, row: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::Parse { row, msg: format!("{what} '{field}' is not a number") })?;
    if !v.is_finite() {
        return Err(Error::Parse { row, msg: format!("{what} must be finite, got {field}") });
    }
    Ok(v)
}

/// Parses table text. Tabs in the header line select tab delimiting.
/// Row numbers in errors count data rows from 1.
pub fn parse_stat_table(text: &str) -> Result<StatTable> {
    let header_line = text.lines().next().unwrap_or("");
    let delimiter = if header_line.contains('\t') { b'\t' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Header(e.to_string()))?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    let col = |names: &[&str]| header.iter().position(|h| names.contains(&h.as_str()));
    let id_col = col(&["id", "gene", "name"]).ok_or_else(|| Error::Header("missing 'id' column".into()))?;
    let stat_col = col(&["stat", "statistic", "t", "z"]);
    let df_col = col(&["df"]);
    let p_col = col(&["p", "p_value", "pvalue"]);
    let sign_col = col(&["sign"]);
    let mode = match (stat_col, p_col) {
        (Some(_), Some(_)) => return Err(Error::Header("both 'stat' and 'p' columns present; use one input mode".into())),
        (Some(_), None) => InputMode::Statistic,
        (None, Some(_)) if sign_col.is_some() => InputMode::PValue,
        (None, Some(_)) => return Err(Error::Header("'p' column needs a 'sign' column".into())),
        (None, None) => return Err(Error::Header("need either 'stat' or 'p' and 'sign' columns".into())),
    };

    let mut rows = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| Error::Parse { row, msg: e.to_string() })?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let id = field(id_col).to_string();
        if id.is_empty() {
            return Err(Error::Parse { row, msg: "empty id".into() });
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Parse { row, msg: format!("duplicate id '{id}'") });
        }
        let observation = match mode {
            InputMode::Statistic => {
                let value = parse_real(field(stat_col.unwrap()), "statistic", row)?;
                let df = match df_col.map(field).filter(|s| !s.is_empty()) {
                    Some(s) => Some(parse_real(s, "df", row)?),
                    None => None,
                };
                let stat = TestStatistic::new(value, df).map_err(|e| Error::Parse { row, msg: e.to_string() })?;
                Observation::Statistic(stat)
            }
            InputMode::PValue => {
                let p = parse_real(field(p_col.unwrap()), "p-value", row)?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Parse { row, msg: format!("p-value {p} outside [0, 1]") });
                }
                let s = field(sign_col.unwrap());
                let sign = parse_sign(s).ok_or_else(|| Error::Parse { row, msg: format!("bad sign '{s}'") })?;
                Observation::PValue { p, sign }
            }
        };
        rows.push(StatRow { id, observation });
    }
    Ok(StatTable { mode, rows })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Format { path: path.to_path_buf(), msg: e.to_string() }
}

pub fn read_stat_table(path: &Path) -> Result<StatTable> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_stat_table(&text).map_err(|e| format_err(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedEntry {
    pub id: String,
    pub side: Side,
    pub q: f64,
}

/// Region boundaries on the signed-p scale and the statistic scale. A side
/// with nothing rejectable has no statistic-scale boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundaries {
    /// `L`: values of q below this are rejected.
    pub lower: f64,
    /// `U`: values of q above this are rejected.
    pub upper: f64,
    /// Two-sided p-value cutoff on the negative side.
    pub lower_p: f64,
    pub upper_p: f64,
    /// Statistics below this are rejected (negative).
    pub lower_statistic: Option<f64>,
    /// Statistics above this are rejected.
    pub upper_statistic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub alpha: f64,
    pub strategy: StrategyKind,
    pub seed: Option<u64>,
    pub input: Option<String>,
    pub mode: InputMode,
    pub n: usize,
    pub n_plus: usize,
    pub n_minus: usize,
    pub rejected: Vec<RejectedEntry>,
    pub rejected_negative: usize,
    pub rejected_positive: usize,
    pub boundaries: Boundaries,
    pub stopped_by: StopReason,
    pub accepted_positive: usize,
    pub accepted_negative: usize,
    pub fdr_hat_trace: Vec<f64>,
    /// Mixture refitted on the final masked data.
    pub fitted: Option<MixtureParams>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub strategy: StrategyKind,
    pub seed: Option<u64>,
    pub input: Option<String>,
}

fn run_table(table: &StatTable, pairs: &PairSet, alpha: f64, strategy: &StrategyKind) -> Result<ProcedureResult> {
    let mut s = strategy.build(table.len());
    run(pairs, &mut *s, alpha)
}

fn boundary_statistic(table: &StatTable, pairs: &PairSet, order: &[usize], accepted: usize, tail: f64) -> Option<f64> {
    if accepted == 0 || tail <= 0.0 {
        return None;
    }
    let row = &table.rows[pairs.pair(order[accepted - 1]).index];
    let s = statistic_for_p(tail, row.df());
    s.is_finite().then_some(s)
}

pub fn analyze(table: &StatTable, alpha: f64, config: &AnalysisConfig) -> Result<AnalysisReport> {
    if table.is_empty() {
        return Err(Error::Empty("statistics table has no rows"));
    }
    let values = table.signed_p_values()?;
    let pairs = build_pairs(&values)?;
    let result = run_table(table, &pairs, alpha, &config.strategy)?;

    let mut warnings = Vec::new();
    let zeros = table
        .rows
        .iter()
        .filter(|r| matches!(r.observation, Observation::Statistic(s) if s.value == 0.0))
        .count();
    if zeros > 0 {
        warnings.push(format!("{zeros} statistic(s) exactly zero were given a positive sign"));
    }
    if result.stopped_by == StopReason::Exhaustion {
        warnings.push(format!("FDR estimate never reached alpha = {alpha}; nothing rejected"));
    }

    let view = MaskedView::new(&pairs, result.accepted_positive, result.accepted_negative)?;
    let em = EmSettings::default();
    let fitted = match fit_em(&view, MixtureParams::initial_guess(&view), em.max_iter, em.tol) {
        Ok(r) => Some(r.params),
        Err(e) => {
            warnings.push(format!("mixture fit failed: {e}"));
            None
        }
    };

    let region = result.region;
    let boundaries = Boundaries {
        lower: region.lower,
        upper: region.upper,
        lower_p: region.lower_tail,
        upper_p: region.upper_tail,
        lower_statistic: boundary_statistic(table, &pairs, pairs.negative_order(), result.accepted_negative, region.lower_tail)
            .map(|s| -s),
        upper_statistic: boundary_statistic(table, &pairs, pairs.positive_order(), result.accepted_positive, region.upper_tail),
    };

    let rejected = result
        .rejected
        .iter()
        .map(|&i| RejectedEntry {
            id: table.rows[i].id.clone(),
            side: match values[i].sign() {
                Sign::Positive => Side::Positive,
                Sign::Negative => Side::Negative,
            },
            q: values[i].value(),
        })
        .collect();

    Ok(AnalysisReport {
        alpha,
        strategy: config.strategy,
        seed: config.seed,
        input: config.input.clone(),
        mode: table.mode,
        n: pairs.len(),
        n_plus: pairs.n_positive(),
        n_minus: pairs.n_negative(),
        rejected,
        rejected_negative: result.rejected_negative,
        rejected_positive: result.rejected_positive,
        boundaries,
        stopped_by: result.stopped_by,
        accepted_positive: result.accepted_positive,
        accepted_negative: result.accepted_negative,
        fdr_hat_trace: result.fdr_hat_trace,
        fitted,
        warnings,
    })
}

/// One row of an α-sweep curve file (`alpha,total,neg,pos`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub total: usize,
    pub neg: usize,
    pub pos: usize,
}

/// `0.01, 0.02, ..., 0.20`.
pub fn alpha_grid() -> Vec<f64> {
    (1..=20).map(|k| k as f64 / 100.0).collect()
}

/// Rejection counts per α, each from an independent run.
pub fn sweep(table: &StatTable, alphas: &[f64], strategy: &StrategyKind, threads: usize) -> Result<Vec<SweepRow>> {
    if table.is_empty() {
        return Err(Error::Empty("statistics table has no rows"));
    }
    let values = table.signed_p_values()?;
    let pairs = build_pairs(&values)?;
    map_indexed(alphas.len(), threads, |k| {
        let r = run_table(table, &pairs, alphas[k], strategy)?;
        Ok(SweepRow {
            alpha: alphas[k],
            total: r.rejected.len(),
            neg: r.rejected_negative,
            pos: r.rejected_positive,
        })
    })
    .into_iter()
    .collect()
}

/// Rejection counts of one procedure on an input table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub procedure: String,
    pub total: usize,
    pub neg: usize,
    pub pos: usize,
}

/// Runs several procedures on the same table. The oracle needs true
/// parameters and is refused.
pub fn compare(table: &StatTable, alpha: f64, procedures: &[ProcedureSpec]) -> Result<Vec<CompareRow>> {
    if table.is_empty() {
        return Err(Error::Empty("statistics table has no rows"));
    }
    let values = table.signed_p_values()?;
    let p_values = table.p_values();
    let z_values = table.z_values();
    let count = |procedure: String, rejected: &[usize]| {
        let neg = rejected.iter().filter(|&&i| values[i].sign() == Sign::Negative).count();
        CompareRow { procedure, total: rejected.len(), neg, pos: rejected.len() - neg }
    };
    procedures
        .iter()
        .map(|spec| {
            let rejected = match spec {
                ProcedureSpec::SignedKnockoff(kind) => {
                    run_table(table, &build_pairs(&values)?, alpha, kind)?.rejected
                }
                ProcedureSpec::Bh => bh(&p_values, alpha),
                ProcedureSpec::Oracle => {
                    return Err(invalid("the oracle procedure needs known generating parameters"))
                }
                ProcedureSpec::External(p) => external(p.as_ref(), &p_values, &z_values, alpha)?,
            };
            Ok(count(spec.name(), &rejected))
        })
        .collect()
}

fn external(p: &dyn ExternalProcedure, p_values: &[f64], z_values: &[f64], alpha: f64) -> Result<Vec<usize>> {
    p.select(&ProcedureInput { p_values, z_values, alpha })
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| invalid(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json(value)?).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e))
}

pub fn write_report(path: &Path, report: &AnalysisReport) -> Result<()> {
    write_json(path, report)
}

pub fn read_report(path: &Path) -> Result<AnalysisReport> {
    read_json(path)
}

/// Writes any serializable rows as CSV with a header from the field names.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| format_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| format_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format_err(path, e))?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| format_err(path, e))
}

/// Parses a study design from TOML. See the README for the keys.
pub fn parse_design(text: &str) -> Result<Design> {
    let design: Design = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
    design.validate()?;
    Ok(design)
}

pub fn read_design(path: &Path) -> Result<Design> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_design(&text).map_err(|e| format_err(path, e))
}

/// One line per procedure of a study (`procedure,reps,errors,mean_fdp,...`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummaryRow {
    pub procedure: String,
    pub seed: u64,
    pub reps: usize,
    pub errors: usize,
    pub mean_fdp: f64,
    pub mcse_fdp: f64,
    pub mean_power: f64,
    pub mcse_power: f64,
}

pub fn study_summary(study: &StudyResult) -> Vec<StudySummaryRow> {
    study
        .procedures
        .iter()
        .map(|p| StudySummaryRow {
            procedure: p.name.clone(),
            seed: study.seed,
            reps: study.reps,
            errors: p.errors.len(),
            mean_fdp: p.mean_fdp,
            mcse_fdp: p.mcse_fdp,
            mean_power: p.mean_power,
            mcse_power: p.mcse_power,
        })
        .collect()
}

/// Output path with the extension swapped, e.g. `out.json` -> `out.csv`.
pub fn sibling(path: &Path, extension: &str) -> PathBuf {
    path.with_extension(extension)
}
