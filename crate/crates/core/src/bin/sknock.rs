use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use signed_knockoff::io::{
    alpha_grid, analyze, compare, read_design, read_stat_table, study_summary, sweep, to_json, write_csv,
    write_json, AnalysisConfig, CompareRow,
};
use signed_knockoff::reference::equivalence_suite;
use signed_knockoff::simulation::{run_study, ProcedureSpec};
use signed_knockoff::strategy::StrategyKind;

#[derive(Parser)]
#[command(name = "sknock", version, about = "Signed-knockoff FDR control with directional information")]
struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the procedure on a statistics table.
    Analyze(AnalyzeArgs),
    /// Run a Monte Carlo study from a design config.
    Simulate(SimulateArgs),
    /// Rejection counts of several procedures on one table.
    Compare(CompareArgs),
    /// Check the engine against the literal reference implementation.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// lfdr, lfdr:<k>, alternate or nearest.
    #[arg(long, default_value = "lfdr")]
    strategy: StrategyKind,
    /// Also write rejection counts for alpha = 0.01, ..., 0.20.
    #[arg(long)]
    sweep: bool,
    /// Curve CSV path; defaults to the report path with a `.curve.csv` extension.
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Report path (JSON); stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Echoed into the report.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the sweep (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    design_config: PathBuf,
    /// Comma-separated: sk, sk-<strategy>, bh, orc.
    #[arg(long, value_delimiter = ',', default_value = "sk,bh,orc")]
    procedures: Vec<ProcedureSpec>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    /// n = 5000 and 200 replicates unless overridden.
    #[arg(long)]
    full_scale: bool,
    /// Worker threads (0 = all cores, 1 = sequential).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Study JSON path; a summary CSV is written next to it. Stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, value_delimiter = ',', default_value = "sk,sk-alternate,sk-nearest,bh")]
    procedures: Vec<ProcedureSpec>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 1000)]
    instances: usize,
    #[arg(long, default_value_t = 12)]
    max_n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Serialize)]
struct CompareOutput<'a> {
    input: String,
    alpha: f64,
    seed: Option<u64>,
    rows: &'a [CompareRow],
}

fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(path) => {
            write_json(path, value)?;
            eprintln!("wrote {}", path.display());
        }
        None => std::io::stdout().write_all(to_json(value)?.as_bytes())?,
    }
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<()> {
    let table = read_stat_table(&a.input)?;
    let config = AnalysisConfig {
        strategy: a.strategy,
        seed: a.seed,
        input: Some(a.input.display().to_string()),
    };
    let report = analyze(&table, a.alpha, &config).with_context(|| format!("analyzing {}", a.input.display()))?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    eprintln!(
        "n = {}, rejected {} ({} negative, {} positive) at alpha = {}",
        report.n,
        report.rejected.len(),
        report.rejected_negative,
        report.rejected_positive,
        report.alpha
    );
    emit(a.out.as_deref(), &report)?;
    if a.sweep {
        let rows = sweep(&table, &alpha_grid(), &a.strategy, a.threads)?;
        match a.curve.or_else(|| a.out.as_ref().map(|o| o.with_extension("curve.csv"))) {
            Some(path) => {
                write_csv(&path, &rows)?;
                eprintln!("wrote {}", path.display());
            }
            None => {
                let mut w = csv::Writer::from_writer(std::io::stdout());
                for r in &rows {
                    w.serialize(r)?;
                }
                w.flush()?;
            }
        }
    }
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let mut design = read_design(&a.design_config)?;
    if a.full_scale {
        design.set_n(5000);
        design.set_reps(200);
    }
    if let Some(n) = a.n {
        design.set_n(n);
    }
    if let Some(r) = a.reps {
        design.set_reps(r);
    }
    if let Some(s) = a.seed {
        design.set_seed(s);
    }
    eprintln!("seed = {}, reps = {}, n = {}", design.seed(), design.reps(), design.n());
    let study = run_study(&design, &a.procedures, a.threads)?;
    let summary = study_summary(&study);
    for row in &summary {
        eprintln!(
            "{:<14} FDR {:.4} (se {:.4})  power {:.4} (se {:.4})  errors {}",
            row.procedure, row.mean_fdp, row.mcse_fdp, row.mean_power, row.mcse_power, row.errors
        );
    }
    emit(a.out.as_deref(), &study)?;
    if let Some(out) = &a.out {
        let path = out.with_extension("summary.csv");
        write_csv(&path, &summary)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let table = read_stat_table(&a.input)?;
    let rows = compare(&table, a.alpha, &a.procedures)?;
    for r in &rows {
        eprintln!("{:<14} total {:>6}  neg {:>6}  pos {:>6}", r.procedure, r.total, r.neg, r.pos);
    }
    let out = CompareOutput {
        input: a.input.display().to_string(),
        alpha: a.alpha,
        seed: a.seed,
        rows: &rows,
    };
    emit(a.out.as_deref(), &out)
}

fn cmd_selftest(a: SelftestArgs) -> Result<()> {
    if a.max_n == 0 {
        bail!("--max-n must be positive");
    }
    let report = equivalence_suite(a.instances, a.max_n, a.seed);
    println!(
        "seed = {}: {} instances, {} comparisons, {} mismatches",
        a.seed,
        report.instances,
        report.comparisons,
        report.mismatches.len()
    );
    if let Some(m) = report.mismatches.first() {
        bail!("first mismatch: instance {} ({}) alpha = {} q = {:?}", m.instance, m.strategy, m.alpha, m.q);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Selftest(a) => cmd_selftest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
