//! `rpo` command-line interface.
//!
//! Exit status is 0 on success, 2 on invalid input (flags, files, values) and
//! 1 when a computation fails.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use super::{fmt_f64, mc_sweep, transition_locator, write_mc_csv, SweepConfig};
use crate::budget::BudgetSpec;
use crate::dominance::{instability_sweep, max_dominance, risk_dominance, toy_probability};
use crate::error::{Error, Result};
use crate::optimizer::{self, Method, PortfolioProblem, SolverOptions};
use crate::regularizer::RegularizerSpec;
use crate::replica::{phase_scan, Control, PhaseScan, SaddleContext};
use crate::returns::{ReturnSample, VarianceConvention};
use crate::risk::{EsConfig, RiskMeasure};

#[derive(Debug, Parser)]
#[command(name = "rpo", version, about = "Regularized portfolio optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Base seed for every random draw.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file (standard output if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one regularized Expected Shortfall or Maximal Loss program.
    Optimize(OptimizeArgs),
    /// Maximal dominance level of a return sample.
    Dominance(DominanceArgs),
    /// Frequency of dominant portfolios stronger than eta on random samples.
    DominanceSweep(DominanceSweepArgs),
    /// Two-asset, two-observation instability probability against its closed form.
    ToyProb(ToyProbArgs),
    /// Large-N saddle-point solutions along one control variable.
    PhaseScan(PhaseScanArgs),
    /// Monte Carlo estimation-error sweep.
    McSweep(McSweepArgs),
    /// Relative q0 deviation between a phase-scan CSV and an mc-sweep CSV.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    /// Returns CSV with header asset_0..asset_{N-1}, one row per observation.
    #[arg(long)]
    input: PathBuf,
    /// Expected Shortfall confidence level.
    #[arg(long, default_value_t = 0.7)]
    beta: f64,
    /// Use Maximal Loss instead of Expected Shortfall.
    #[arg(long)]
    maximal_loss: bool,
    /// Regularizer: none, l1:ETA, l2:ETA, lp:P:ETA or en:ETA1:ETA2.
    #[arg(long, default_value = "none")]
    reg: RegularizerSpec,
    /// Forbid short positions.
    #[arg(long)]
    no_short: bool,
    /// Return scale when the input has no JSON sidecar.
    #[arg(long, default_value = "unit_variance")]
    convention: VarianceConvention,
    /// auto, simplex or interior-point.
    #[arg(long, default_value = "auto", value_parser = parse_method)]
    method: Method,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct DominanceArgs {
    #[arg(long)]
    input: PathBuf,
    /// Measure dominance through Expected Shortfall at this level instead of
    /// the worst observation.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value = "unit_variance")]
    convention: VarianceConvention,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct DominanceSweepArgs {
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    t: usize,
    /// Grid as START:STOP:STEP or a comma-separated list.
    #[arg(long, value_parser = parse_grid)]
    eta_grid: Grid,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct ToyProbArgs {
    #[arg(long, value_parser = parse_grid)]
    eta: Grid,
    #[arg(long, default_value_t = 200_000)]
    samples: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct PhaseScanArgs {
    /// n-over-t, eta1 or eta2.
    #[arg(long)]
    control: Control,
    #[arg(long, value_parser = parse_grid)]
    grid: Grid,
    #[arg(long, default_value = "none")]
    reg: RegularizerSpec,
    #[arg(long, default_value_t = 0.7)]
    beta: f64,
    /// T/N for eta scans.
    #[arg(long, default_value_t = 2.0)]
    tau: f64,
    /// Budget per asset.
    #[arg(long, default_value_t = 1.0)]
    wealth: f64,
    /// Where to write the critical-point summary (default: next to --out, or standard error).
    #[arg(long)]
    footer: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct McSweepArgs {
    /// JSON sweep configuration; the flags below are ignored when it is given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value = "n-over-t")]
    control: Control,
    #[arg(long, value_parser = parse_grid)]
    grid: Option<Grid>,
    #[arg(long, default_value_t = 2.0)]
    tau: f64,
    #[arg(long, default_value_t = 0.7)]
    beta: f64,
    #[arg(long, default_value = "none")]
    reg: RegularizerSpec,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Also fit the transition and write it to this JSON file.
    #[arg(long)]
    transition: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// CSV written by phase-scan.
    replica: PathBuf,
    /// CSV written by mc-sweep.
    mc: PathBuf,
    /// Exit with status 1 if the maximum deviation exceeds this.
    #[arg(long)]
    tolerance: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Clone, PartialEq)]
struct Grid(Vec<f64>);

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    match s {
        "auto" => Ok(Method::Auto),
        "simplex" => Ok(Method::Simplex),
        "interior-point" | "ipm" => Ok(Method::InteriorPoint),
        other => Err(format!("unknown method '{other}'")),
    }
}

fn parse_grid(s: &str) -> std::result::Result<Grid, String> {
    parse_values(s).map(Grid).map_err(|e| e.to_string())
}

/// Parses `START:STOP:STEP` (inclusive of `STOP` up to rounding) or a
/// comma-separated list.
pub fn parse_values(s: &str) -> Result<Vec<f64>> {
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::invalid(format!("'{t}' is not a finite number")))
    };
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::invalid(format!("range '{s}' must be START:STOP:STEP")));
        }
        let (a, b, h) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if h == 0.0 || (b - a) * h < 0.0 {
            return Err(Error::invalid(format!("step of '{s}' does not move from start to stop")));
        }
        let n = ((b - a) / h + 1e-9).floor() as usize;
        if n > 10_000_000 {
            return Err(Error::invalid(format!("range '{s}' has too many points")));
        }
        Ok((0..=n).map(|i| a + i as f64 * h).collect())
    } else {
        let v = s.split(',').map(num).collect::<Result<Vec<_>>>()?;
        if v.is_empty() {
            return Err(Error::invalid("empty list"));
        }
        Ok(v)
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// exit status.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    configure_threads();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("RPO_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Optimize(a) => optimize(a),
        Command::Dominance(a) => dominance(a),
        Command::DominanceSweep(a) => dominance_sweep(a),
        Command::ToyProb(a) => toy_prob(a),
        Command::PhaseScan(a) => phase_scan_cmd(a),
        Command::McSweep(a) => mc_sweep_cmd(a),
        Command::Compare(a) => compare(a),
    }
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn write_json<T: Serialize>(path: &Option<PathBuf>, value: &T) -> Result<()> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn optimize(a: OptimizeArgs) -> Result<()> {
    let sample = ReturnSample::load(&a.input, a.convention)?;
    let measure = if a.maximal_loss {
        RiskMeasure::MaximalLoss
    } else {
        RiskMeasure::es(a.beta)?
    };
    let budget = BudgetSpec::for_convention(sample.convention());
    let problem = PortfolioProblem::new(sample, measure, a.reg, budget)?.with_short_ban(a.no_short);
    let opts = SolverOptions {
        method: a.method,
        ..SolverOptions::default()
    };
    let sol = optimizer::solve(&problem, &opts)?;
    write_json(&a.common.out, &sol)
}

fn dominance(a: DominanceArgs) -> Result<()> {
    let sample = ReturnSample::load(&a.input, a.convention)?;
    let cert = match a.beta {
        Some(beta) => risk_dominance(&sample, EsConfig::new(beta)?.tail_size(sample.n_obs())?),
        None => max_dominance(&sample),
    };
    write_json(&a.common.out, &cert)
}

fn dominance_sweep(a: DominanceSweepArgs) -> Result<()> {
    let est = instability_sweep(a.n, a.t, &a.eta_grid.0, a.samples, a.common.seed)?;
    let mut w = csv::Writer::from_writer(output(&a.common.out)?);
    w.write_record(["eta", "p_hat", "ci_low", "ci_high"])?;
    for e in est {
        w.write_record([fmt_f64(e.eta), fmt_f64(e.p_hat), fmt_f64(e.ci_low), fmt_f64(e.ci_high)])?;
    }
    w.flush()?;
    Ok(())
}

fn toy_prob(a: ToyProbArgs) -> Result<()> {
    let est = instability_sweep(2, 2, &a.eta.0, a.samples, a.common.seed)?;
    let mut w = csv::Writer::from_writer(output(&a.common.out)?);
    w.write_record(["eta", "p_closed_form", "p_empirical", "ci"])?;
    for e in est {
        w.write_record([
            fmt_f64(e.eta),
            fmt_f64(toy_probability(e.eta)),
            fmt_f64(e.p_hat),
            fmt_f64(1.96 * e.std_error),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a phase scan as CSV with header
/// `control,q0,delta_hat,lambda,epsilon,status`.
pub fn write_scan_csv<W: Write>(scan: &PhaseScan, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["control", "q0", "delta_hat", "lambda", "epsilon", "status"])?;
    for r in &scan.rows {
        w.write_record([
            fmt_f64(r.control),
            fmt_f64(r.q0),
            fmt_f64(r.delta_hat),
            fmt_f64(r.lambda),
            fmt_f64(r.epsilon),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

#[derive(Serialize)]
struct ScanFooter<'a> {
    control: Control,
    reg: RegularizerSpec,
    beta: f64,
    critical: &'a Option<crate::replica::CriticalPoint>,
    n_converged: usize,
    n_diverged: usize,
    n_failed: usize,
}

fn phase_scan_cmd(a: PhaseScanArgs) -> Result<()> {
    let template = SaddleContext::new(a.tau, a.beta, a.reg)?.with_wealth(a.wealth);
    template.validate()?;
    let scan = phase_scan(&template, a.control, &a.grid.0)?;
    write_scan_csv(&scan, output(&a.common.out)?)?;
    let footer = ScanFooter {
        control: a.control,
        reg: a.reg,
        beta: a.beta,
        critical: &scan.critical,
        n_converged: scan.rows.iter().filter(|r| r.is_converged()).count(),
        n_diverged: scan.rows.iter().filter(|r| r.is_diverged()).count(),
        n_failed: scan.rows.iter().filter(|r| !r.is_converged() && !r.is_diverged()).count(),
    };
    let path = a.footer.or_else(|| a.common.out.as_deref().map(|p| sibling(p, "critical.json")));
    match path {
        Some(p) => write_json(&Some(p), &footer),
        None => {
            eprintln!("{}", serde_json::to_string_pretty(&footer)?);
            Ok(())
        }
    }
}

fn mc_sweep_cmd(a: McSweepArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(path) => {
            let mut text = String::new();
            File::open(path)?.read_to_string(&mut text)?;
            let mut cfg: SweepConfig = serde_json::from_str(&text)?;
            if a.common.out.is_some() {
                cfg.output = a.common.out.clone();
            }
            cfg
        }
        None => SweepConfig {
            n_assets: a.n,
            control: a.control,
            grid: a
                .grid
                .clone()
                .ok_or_else(|| Error::invalid("--grid is required without --config"))?
                .0,
            tau: a.tau,
            beta: a.beta,
            reg: a.reg,
            n_samples: a.samples,
            base_seed: a.common.seed,
            budget: BudgetSpec::default(),
            output: a.common.out.clone(),
        },
    };
    let rows = mc_sweep(&cfg)?;
    write_mc_csv(&rows, output(&cfg.output)?)?;
    if let Some(path) = a.transition {
        let est = transition_locator(&rows, cfg.base_seed)?;
        write_json(&Some(path), &est)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct ComparedPoint {
    control: f64,
    q0_replica: f64,
    q0_mc: f64,
    q0_mc_stderr: f64,
    relative_deviation: f64,
}

#[derive(Debug, Serialize)]
struct CompareReport {
    n_matched: usize,
    max_relative_deviation: f64,
    at_control: f64,
    points: Vec<ComparedPoint>,
}

fn read_columns(path: &Path, wanted: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let idx = wanted
        .iter()
        .map(|name| {
            headers.iter().position(|h| h == *name).ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("{}: missing column '{name}'", path.display()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let vals = idx
            .iter()
            .map(|&i| {
                let f = record.get(i).unwrap_or("");
                f.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("{}: '{f}' is not a number", path.display()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(vals);
    }
    Ok(rows)
}

fn compare(a: CompareArgs) -> Result<()> {
    let replica = read_columns(&a.replica, &["control", "q0"])?;
    let mc = read_columns(&a.mc, &["control_value", "q0_mean", "q0_stderr"])?;
    let mut points = Vec::new();
    for r in &replica {
        let Some(m) = mc.iter().find(|m| (m[0] - r[0]).abs() <= 1e-9 * r[0].abs().max(1.0)) else {
            continue;
        };
        if !(r[1].is_finite() && m[1].is_finite()) {
            continue;
        }
        points.push(ComparedPoint {
            control: r[0],
            q0_replica: r[1],
            q0_mc: m[1],
            q0_mc_stderr: m[2],
            relative_deviation: (m[1] - r[1]).abs() / r[1].abs(),
        });
    }
    if points.is_empty() {
        return Err(Error::invalid("no control value with finite q0 in both files"));
    }
    let worst = points
        .iter()
        .max_by(|x, y| x.relative_deviation.total_cmp(&y.relative_deviation))
        .cloned()
        .expect("non-empty");
    let report = CompareReport {
        n_matched: points.len(),
        max_relative_deviation: worst.relative_deviation,
        at_control: worst.control,
        points,
    };
    write_json(&a.common.out, &report)?;
    if let Some(tol) = a.tolerance {
        if report.max_relative_deviation > tol {
            return Err(Error::ToleranceExceeded {
                value: report.max_relative_deviation,
                tolerance: tol,
            });
        }
    }
    Ok(())
}
