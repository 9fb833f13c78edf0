//! Regularized Expected Shortfall / Maximal Loss portfolio optimization.
//!
//! The program is
//!
//! ```text
//! min_{w, eps, u}  k eps + sum_t u_t + penalty(w)
//!   s.t.  w . x_t + eps + u_t >= 0,  u_t >= 0,  sum_i w_i = budget
//! ```
//!
//! with `k = (1 - beta) T` (or `k = 1` for Maximal Loss). Linear penalties are
//! solved exactly by the simplex method after a dominance pre-check that
//! certifies unboundedness; strictly convex penalties use a primal-dual
//! interior-point method; `p < 1` penalties use reweighted-L1 iterations
//! under a runaway guard.

mod gradient;
mod interior;
mod kkt;
mod linear;
mod nonconvex;

pub use gradient::{finite_difference_gradient, objective_gradient};
pub use kkt::{check_kkt, check_kkt_with, KktReport, ZERO_WEIGHT};

use serde::{Deserialize, Serialize};

use crate::budget::BudgetSpec;
use crate::dominance::DominanceCertificate;
use crate::error::{Error, Result};
use crate::regularizer::RegularizerSpec;
use crate::returns::ReturnSample;
use crate::risk::{regularized_objective, LossSeries, RiskMeasure};

/// Weights with `|w|_1` above this are treated as a runaway.
pub const RUNAWAY_NORM: f64 = 1e8;

/// Margin by which the dominance level must exceed the penalty amplitude
/// before the program is declared unbounded.
pub const BOUNDARY_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct PortfolioProblem {
    pub sample: ReturnSample,
    pub measure: RiskMeasure,
    pub reg: RegularizerSpec,
    pub budget: BudgetSpec,
    pub short_ban: bool,
}

impl PortfolioProblem {
    pub fn new(sample: ReturnSample, measure: RiskMeasure, reg: RegularizerSpec, budget: BudgetSpec) -> Result<Self> {
        let p = Self {
            sample,
            measure,
            reg,
            budget,
            short_ban: false,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_short_ban(mut self, ban: bool) -> Self {
        self.short_ban = ban;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.reg.validate()?;
        self.budget.validate(self.sample.convention())?;
        self.measure.tail_size(self.sample.n_obs())?;
        Ok(())
    }

    pub fn n_assets(&self) -> usize {
        self.sample.n_assets()
    }

    /// Tail size `k`.
    pub fn tail_size(&self) -> f64 {
        self.measure
            .tail_size(self.sample.n_obs())
            .expect("validated at construction")
    }

    pub fn budget_target(&self) -> f64 {
        self.budget.target(self.sample.n_assets())
    }

    /// `k rho(w) + penalty(w)`, evaluated directly from the data.
    pub fn objective(&self, weights: &[f64]) -> Result<f64> {
        regularized_objective(self.measure, &self.reg, weights, &self.sample)
    }

    pub fn losses(&self, weights: &[f64]) -> Result<LossSeries> {
        LossSeries::new(weights, &self.sample)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Unbounded,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Choose by regularizer: simplex for linear penalties, interior point for
    /// strictly convex ones, reweighted L1 for `p < 1`.
    Auto,
    Simplex,
    InteriorPoint,
}

/// Multipliers of the tail rows (`pi`) and of the budget (`lambda`).
///
/// At an optimum `(X pi)_i + lambda` lies in the subdifferential of the
/// per-asset penalty at `w_i`, `sum pi = k` and `0 <= pi <= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Duals {
    pub pi: Vec<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSolution {
    pub status: SolveStatus,
    pub weights: Vec<f64>,
    pub objective: f64,
    pub epsilon_star: f64,
    pub tail_set: Vec<usize>,
    pub q0_empirical: f64,
    pub dominance_certificate: Option<DominanceCertificate>,
    /// Set when the runaway guard stopped the iterations.
    pub runaway: bool,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duals: Option<Duals>,
}

impl PortfolioSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Fills the quantities that are functions of the weights alone.
    fn from_weights(problem: &PortfolioProblem, status: SolveStatus, weights: Vec<f64>, iterations: usize) -> Result<Self> {
        let k = problem.tail_size();
        let losses = problem.losses(&weights)?;
        let eps = losses.tail_threshold(k);
        let scale = 1.0 + eps.abs();
        let tail_set = losses
            .losses()
            .iter()
            .enumerate()
            .filter(|(_, &l)| l > eps + 1e-12 * scale)
            .map(|(t, _)| t)
            .collect();
        let objective = problem.objective(&weights)?;
        let q0 = q0_empirical(&weights);
        Ok(Self {
            status,
            weights,
            objective,
            epsilon_star: eps,
            tail_set,
            q0_empirical: q0,
            dominance_certificate: None,
            runaway: false,
            iterations,
            duals: None,
        })
    }

    fn unbounded(problem: &PortfolioProblem, cert: DominanceCertificate) -> Self {
        let n = problem.n_assets();
        Self {
            status: SolveStatus::Unbounded,
            weights: vec![f64::NAN; n],
            objective: f64::NEG_INFINITY,
            epsilon_star: f64::NAN,
            tail_set: Vec::new(),
            q0_empirical: f64::INFINITY,
            dominance_certificate: Some(cert),
            runaway: false,
            iterations: 0,
            duals: None,
        }
    }
}

/// `(1/N) sum_i w_i^2`.
pub fn q0_empirical(weights: &[f64]) -> f64 {
    weights.iter().map(|w| w * w).sum::<f64>() / weights.len() as f64
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Stopping tolerance on the interior-point residuals and complementarity.
    pub tol: f64,
    /// Iteration cap of the interior-point method; also caps the reweighting
    /// rounds for `p < 1`.
    pub max_iter: usize,
    /// Simplex pivot cap (0 picks a size-dependent default).
    pub lp_max_iter: usize,
    pub method: Method,
    /// Report unbounded linear programs with the maximal-level dominance
    /// certificate. When off, the simplex ray alone decides and the
    /// certificate carries that ray's (smaller) level.
    pub certify_max_level: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            lp_max_iter: 0,
            method: Method::Auto,
            certify_max_level: true,
        }
    }
}

/// Solves the regularized program.
///
/// Unbounded programs come back with status `Unbounded` and a dominance
/// certificate; `p < 1` programs that run past the runaway guard come back
/// with status `MaxIterations` and `runaway = true`.
pub fn solve(problem: &PortfolioProblem, opts: &SolverOptions) -> Result<PortfolioSolution> {
    problem.validate()?;
    let reg = problem.reg.canonical();
    if reg.is_sublinear() {
        return nonconvex::solve(problem, opts);
    }
    let method = match opts.method {
        Method::Auto if reg.is_superlinear() => Method::InteriorPoint,
        Method::Auto => Method::Simplex,
        m => m,
    };
    match method {
        Method::Simplex => {
            if reg.linear_amplitude().is_none() {
                return Err(Error::invalid(format!(
                    "the simplex method needs a linear penalty, got {reg}"
                )));
            }
            linear::solve(problem, opts)
        }
        _ => {
            if !reg.is_superlinear() && !problem.short_ban {
                if let Some(cert) = linear::unbounded_certificate(problem) {
                    return Ok(PortfolioSolution::unbounded(problem, cert));
                }
            }
            interior::solve(problem, opts)
        }
    }
}

/// Solves with the hard constraint `w_i >= 0`.
pub fn solve_no_short(problem: &PortfolioProblem, opts: &SolverOptions) -> Result<PortfolioSolution> {
    let banned = problem.clone().with_short_ban(true);
    solve(&banned, opts)
}

#[cfg(test)]
mod tests;
