//! Warm-started sweeps of the saddle point along one control variable.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::saddle::{follow, solve_saddle_with, SaddleOptions};
use super::{OrderParameters, SaddleContext, SaddleSolution};
use crate::error::{Error, Result};
use crate::regularizer::RegularizerSpec;

/// Resolution of the critical-point bisection in the control variable.
pub const CRITICAL_RESOLUTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Control {
    /// `N/T = 1/tau`.
    NOverT,
    /// L1 amplitude of an elastic net.
    Eta1,
    /// L2 amplitude of an elastic net.
    Eta2,
}

impl Control {
    pub fn name(self) -> &'static str {
        match self {
            Control::NOverT => "n-over-t",
            Control::Eta1 => "eta1",
            Control::Eta2 => "eta2",
        }
    }

    /// `template` with the control set to `value`.
    pub fn apply(self, template: &SaddleContext, value: f64) -> Result<SaddleContext> {
        let mut ctx = *template;
        match self {
            Control::NOverT => {
                if !(value > 0.0) {
                    return Err(Error::invalid(format!("N/T must be positive, got {value}")));
                }
                ctx.tau = 1.0 / value;
            }
            Control::Eta1 | Control::Eta2 => {
                let (eta1, eta2) = match template.reg.canonical() {
                    RegularizerSpec::ElasticNet { eta1, eta2 } => (eta1, eta2),
                    RegularizerSpec::PureLp { p, eta } if p == 2.0 => (0.0, eta),
                    other => {
                        return Err(Error::invalid(format!(
                            "{} scans need an elastic-net template, got {other}",
                            self.name()
                        )))
                    }
                };
                ctx.reg = if self == Control::Eta1 {
                    RegularizerSpec::elastic_net(value, eta2)?
                } else {
                    RegularizerSpec::elastic_net(eta1, value)?
                };
            }
        }
        ctx.validate()?;
        Ok(ctx)
    }
}

impl fmt::Display for Control {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Control {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n-over-t" | "n_over_t" | "nt" => Ok(Control::NOverT),
            "eta1" => Ok(Control::Eta1),
            "eta2" => Ok(Control::Eta2),
            other => Err(Error::invalid(format!("unknown scan control '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaScanRow {
    pub control: f64,
    pub q0: f64,
    pub delta_hat: f64,
    pub lambda: f64,
    pub epsilon: f64,
    /// `converged`, `diverged` or `failed`.
    pub status: String,
}

impl ReplicaScanRow {
    fn from_solution(control: f64, sol: &SaddleSolution) -> Self {
        let status = if sol.converged { "converged" } else { "diverged" };
        Self {
            control,
            q0: if sol.converged { sol.params.q0 } else { f64::INFINITY },
            delta_hat: if sol.converged { sol.params.delta_hat } else { 0.0 },
            lambda: sol.params.lambda,
            epsilon: sol.params.epsilon,
            status: status.to_string(),
        }
    }

    fn failed(control: f64) -> Self {
        Self {
            control,
            q0: f64::NAN,
            delta_hat: f64::NAN,
            lambda: f64::NAN,
            epsilon: f64::NAN,
            status: "failed".to_string(),
        }
    }

    pub fn is_converged(&self) -> bool {
        self.status == "converged"
    }

    pub fn is_diverged(&self) -> bool {
        self.status == "diverged"
    }
}

/// Control values bracketing the feasible-infeasible transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    /// Last control value with a converged solution.
    pub converged: f64,
    /// First control value classified as diverged.
    pub diverged: f64,
    /// Midpoint of the final bracket.
    pub estimate: f64,
    /// `q0` at the converged end of the bracket.
    pub q0_at_converged: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseScan {
    pub control: Control,
    pub rows: Vec<ReplicaScanRow>,
    pub critical: Option<CriticalPoint>,
}

pub fn phase_scan(template: &SaddleContext, control: Control, grid: &[f64]) -> Result<PhaseScan> {
    phase_scan_with(template, control, grid, &SaddleOptions::default())
}

/// Sweeps `grid` in order, warm-starting each point from the last converged
/// one. Failures are recorded per point and the sweep continues. The first
/// converged-to-diverged step is refined by bisection down to
/// [`CRITICAL_RESOLUTION`].
pub fn phase_scan_with(
    template: &SaddleContext,
    control: Control,
    grid: &[f64],
    opts: &SaddleOptions,
) -> Result<PhaseScan> {
    if grid.is_empty() {
        return Err(Error::invalid("empty scan grid"));
    }
    let increasing = grid.windows(2).all(|p| p[1] > p[0]);
    let decreasing = grid.windows(2).all(|p| p[1] < p[0]);
    if !(increasing || decreasing) {
        return Err(Error::invalid("scan grid must be strictly monotone"));
    }
    let contexts = grid
        .iter()
        .map(|&v| control.apply(template, v))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(grid.len());
    let mut last: Option<(f64, SaddleContext, OrderParameters)> = None;
    let mut bracket: Option<(f64, SaddleContext, OrderParameters, f64)> = None;
    for (&value, ctx) in grid.iter().zip(&contexts) {
        let outcome = match &last {
            Some((_, from, params)) => follow(from, params, ctx, opts),
            None => solve_saddle_with(ctx, None, opts),
        };
        match outcome {
            Ok(sol) => {
                rows.push(ReplicaScanRow::from_solution(value, &sol));
                if sol.converged {
                    last = Some((value, *ctx, sol.params));
                } else if bracket.is_none() {
                    if let Some((v0, c0, p0)) = &last {
                        bracket = Some((*v0, *c0, *p0, value));
                    }
                }
            }
            Err(_) => rows.push(ReplicaScanRow::failed(value)),
        }
    }

    let critical = bracket.map(|(lo, ctx_lo, p_lo, hi)| refine(template, control, lo, ctx_lo, p_lo, hi, opts));
    Ok(PhaseScan { control, rows, critical })
}

fn refine(
    template: &SaddleContext,
    control: Control,
    mut lo: f64,
    mut ctx_lo: SaddleContext,
    mut p_lo: OrderParameters,
    mut hi: f64,
    opts: &SaddleOptions,
) -> CriticalPoint {
    while (hi - lo).abs() > CRITICAL_RESOLUTION {
        let mid = 0.5 * (lo + hi);
        let Ok(ctx) = control.apply(template, mid) else {
            break;
        };
        match follow(&ctx_lo, &p_lo, &ctx, opts) {
            Ok(sol) if sol.converged => {
                lo = mid;
                ctx_lo = ctx;
                p_lo = sol.params;
            }
            _ => hi = mid,
        }
    }
    CriticalPoint {
        converged: lo,
        diverged: hi,
        estimate: 0.5 * (lo + hi),
        q0_at_converged: p_lo.q0,
    }
}
