//! Monte Carlo estimation-error experiments and the command-line front end.
//!
//! Sample `s` of grid point `i` in a sweep with base seed `b` draws its returns
//! from `substream_seed(substream_seed(b, i), s)`. Two sweeps with the same
//! base seed and grid therefore see identical return samples, whatever the
//! regularizer, and results do not depend on the number of worker threads.

pub mod cli;
mod transition;

pub use transition::{transition_locator, transition_locator_with, TransitionEstimate, BOOTSTRAP_RESAMPLES};

use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::{BudgetSpec, Normalization};
use crate::error::{Error, Result};
use crate::optimizer::{self, PortfolioProblem, SolveStatus, SolverOptions};
use crate::quadrature::pairwise_sum;
use crate::regularizer::RegularizerSpec;
use crate::replica::Control;
use crate::returns::sample_returns;
use crate::risk::RiskMeasure;
use crate::rng::substream_seed;

/// Formats a float for CSV output with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// A Monte Carlo sweep over one control variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n_assets: usize,
    pub control: Control,
    /// Values of the control, strictly monotone.
    pub grid: Vec<f64>,
    /// `T/N` used when the control is a penalty amplitude.
    #[serde(default = "default_tau")]
    pub tau: f64,
    pub beta: f64,
    /// Regularizer; for `eta1`/`eta2` sweeps the other amplitude is taken from here.
    pub reg: RegularizerSpec,
    pub n_samples: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub budget: BudgetSpec,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_tau() -> f64 {
    2.0
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_assets == 0 {
            return Err(Error::invalid("n_assets must be positive"));
        }
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be at least 1"));
        }
        if self.grid.is_empty() {
            return Err(Error::invalid("empty sweep grid"));
        }
        let up = self.grid.windows(2).all(|p| p[1] > p[0]);
        let down = self.grid.windows(2).all(|p| p[1] < p[0]);
        if !(up || down) {
            return Err(Error::invalid("sweep grid must be strictly monotone"));
        }
        if self.budget.normalization != Normalization::SumToN {
            return Err(Error::invalid("Monte Carlo sweeps use the sum_to_n budget"));
        }
        self.reg.validate()?;
        for &v in &self.grid {
            self.point(v)?;
        }
        Ok(())
    }

    /// `(tau, reg)` at control value `v`.
    pub fn point(&self, v: f64) -> Result<(f64, RegularizerSpec)> {
        match self.control {
            Control::NOverT => {
                if !(v > 0.0) {
                    return Err(Error::invalid(format!("N/T must be positive, got {v}")));
                }
                Ok((1.0 / v, self.reg))
            }
            Control::Eta1 => Ok((self.tau, RegularizerSpec::elastic_net(v, self.elastic_net()?.1)?)),
            Control::Eta2 => Ok((self.tau, RegularizerSpec::elastic_net(self.elastic_net()?.0, v)?)),
        }
    }

    fn elastic_net(&self) -> Result<(f64, f64)> {
        match self.reg.canonical() {
            RegularizerSpec::ElasticNet { eta1, eta2 } => Ok((eta1, eta2)),
            RegularizerSpec::PureLp { p, eta } if p == 2.0 => Ok((0.0, eta)),
            other => Err(Error::invalid(format!(
                "{} sweeps need an elastic-net regularizer, got {other}",
                self.control
            ))),
        }
    }
}

/// Aggregated Monte Carlo outcome at one control value.
///
/// `q0` statistics use the bounded samples only. Samples that end in a solver
/// failure are excluded and counted separately, so
/// `n_effective + n_unbounded + n_excluded = n_samples`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseScanRow {
    pub control_value: f64,
    pub q0_mean: f64,
    pub q0_stderr: f64,
    /// `n_unbounded / (n_effective + n_unbounded)`.
    pub frac_unbounded: f64,
    pub n_effective: usize,
    pub n_unbounded: usize,
    pub n_excluded: usize,
    pub n_samples: usize,
}

pub const MC_CSV_HEADER: [&str; 8] = [
    "control_value",
    "q0_mean",
    "q0_stderr",
    "frac_unbounded",
    "n_effective",
    "n_unbounded",
    "n_excluded",
    "n_samples",
];

impl PhaseScanRow {
    fn record(&self) -> Vec<String> {
        vec![
            fmt_f64(self.control_value),
            fmt_f64(self.q0_mean),
            fmt_f64(self.q0_stderr),
            fmt_f64(self.frac_unbounded),
            self.n_effective.to_string(),
            self.n_unbounded.to_string(),
            self.n_excluded.to_string(),
            self.n_samples.to_string(),
        ]
    }

    /// Number of samples whose boundedness was decided.
    pub fn n_decided(&self) -> usize {
        self.n_effective + self.n_unbounded
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Outcome {
    Bounded(f64),
    Unbounded,
    Excluded,
}

fn run_sample(n_assets: usize, n_obs: usize, beta: f64, reg: RegularizerSpec, budget: BudgetSpec, seed: u64) -> Result<Outcome> {
    let sample = sample_returns(n_assets, n_obs, seed, budget.normalization.convention())?;
    let problem = PortfolioProblem::new(sample, RiskMeasure::es(beta)?, reg, budget)?;
    let opts = SolverOptions {
        certify_max_level: false,
        ..SolverOptions::default()
    };
    Ok(match optimizer::solve(&problem, &opts) {
        Ok(sol) => match sol.status {
            SolveStatus::Optimal => Outcome::Bounded(sol.q0_empirical),
            SolveStatus::Unbounded => Outcome::Unbounded,
            SolveStatus::MaxIterations if sol.runaway => Outcome::Unbounded,
            SolveStatus::MaxIterations => Outcome::Excluded,
        },
        Err(e) if e.is_validation() => return Err(e),
        Err(_) => Outcome::Excluded,
    })
}

/// `T = round(tau N)`.
pub fn n_obs_for(n_assets: usize, tau: f64) -> Result<usize> {
    let t = (tau * n_assets as f64).round();
    if !(t >= 2.0) {
        return Err(Error::invalid(format!(
            "T = round(tau N) = {t} must be at least 2 (tau = {tau}, N = {n_assets})"
        )));
    }
    Ok(t as usize)
}

/// Solves `n_samples` independent regularized Expected Shortfall programs on
/// `N x round(tau N)` samples with variance `1/N` and budget `sum w = N`,
/// and aggregates the empirical `q0 = (1/N) sum w_i^2`.
pub fn mc_estimate(
    n_assets: usize,
    tau: f64,
    beta: f64,
    reg: RegularizerSpec,
    n_samples: usize,
    seed: u64,
) -> Result<PhaseScanRow> {
    mc_estimate_with(n_assets, tau, beta, reg, BudgetSpec::default(), n_samples, seed, 1.0 / tau)
}

#[allow(clippy::too_many_arguments)]
fn mc_estimate_with(
    n_assets: usize,
    tau: f64,
    beta: f64,
    reg: RegularizerSpec,
    budget: BudgetSpec,
    n_samples: usize,
    seed: u64,
    control_value: f64,
) -> Result<PhaseScanRow> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    if budget.normalization != Normalization::SumToN {
        return Err(Error::invalid("Monte Carlo estimates use the sum_to_n budget"));
    }
    let n_obs = n_obs_for(n_assets, tau)?;
    RiskMeasure::es(beta)?.tail_size(n_obs)?;
    reg.validate()?;
    let outcomes: Vec<Outcome> = (0..n_samples)
        .into_par_iter()
        .map(|s| run_sample(n_assets, n_obs, beta, reg, budget, substream_seed(seed, s as u64)))
        .collect::<Result<_>>()?;
    Ok(aggregate(control_value, &outcomes))
}

fn aggregate(control_value: f64, outcomes: &[Outcome]) -> PhaseScanRow {
    let mut q: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| match o {
            Outcome::Bounded(q) => Some(*q),
            _ => None,
        })
        .collect();
    let n_unbounded = outcomes.iter().filter(|o| **o == Outcome::Unbounded).count();
    let n_excluded = outcomes.iter().filter(|o| **o == Outcome::Excluded).count();
    let n_eff = q.len();
    let (mean, stderr) = match n_eff {
        0 => (f64::NAN, f64::NAN),
        1 => (q[0], f64::NAN),
        n => {
            let mean = pairwise_sum(&mut q.clone()) / n as f64;
            let mut dev: Vec<f64> = q.iter_mut().map(|v| (*v - mean).powi(2)).collect();
            let var = pairwise_sum(&mut dev) / (n - 1) as f64;
            (mean, (var / n as f64).sqrt())
        }
    };
    let decided = n_eff + n_unbounded;
    PhaseScanRow {
        control_value,
        q0_mean: mean,
        q0_stderr: stderr,
        frac_unbounded: if decided == 0 { f64::NAN } else { n_unbounded as f64 / decided as f64 },
        n_effective: n_eff,
        n_unbounded,
        n_excluded,
        n_samples: outcomes.len(),
    }
}

/// Runs [`mc_estimate`] at every grid point of `cfg`.
pub fn mc_sweep(cfg: &SweepConfig) -> Result<Vec<PhaseScanRow>> {
    cfg.validate()?;
    cfg.grid
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (tau, reg) = cfg.point(v)?;
            mc_estimate_with(
                cfg.n_assets,
                tau,
                cfg.beta,
                reg,
                cfg.budget,
                cfg.n_samples,
                substream_seed(cfg.base_seed, i as u64),
                v,
            )
        })
        .collect()
}

pub fn write_mc_csv<W: Write>(rows: &[PhaseScanRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MC_CSV_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}
