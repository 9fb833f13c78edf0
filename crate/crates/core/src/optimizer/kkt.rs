use serde::{Deserialize, Serialize};

use super::{PortfolioProblem, PortfolioSolution};
use crate::error::{Error, Result};

/// Weights at or below this magnitude are treated as exact zeros.
pub const ZERO_WEIGHT: f64 = 1e-8;

/// Optimality residuals of a solution, each an absolute maximum violation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// Budget equality and, under a short ban, weight signs.
    pub primal: f64,
    /// `0 <= pi_t <= 1` and `sum pi = k`.
    pub dual: f64,
    /// `pi_t r_t` and `(1 - pi_t) u_t` at `(w, eps*, u*)`.
    pub complementarity: f64,
    /// Distance of `(X pi)_i + lambda` from the penalty subdifferential at `w_i`.
    pub stationarity: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.complementarity).max(self.stationarity)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

/// Residuals of the optimality conditions of an `Optimal` solution.
///
/// `u*_t = max(0, l_t - eps*)` is rebuilt from the weights, so the tail rows
/// hold exactly; the multipliers are the ones returned by the solver.
pub fn check_kkt(problem: &PortfolioProblem, solution: &PortfolioSolution) -> Result<KktReport> {
    check_kkt_with(problem, &solution.weights, solution.duals.as_ref().ok_or_else(|| {
        Error::invalid("KKT check needs a solution that carries multipliers")
    })?)
}

/// [`check_kkt`] for explicit weights and multipliers.
pub fn check_kkt_with(problem: &PortfolioProblem, weights: &[f64], duals: &super::Duals) -> Result<KktReport> {
    let (n, t) = problem.sample.dims();
    problem.sample.check_weights(weights)?;
    if duals.pi.len() != t {
        return Err(Error::DimensionMismatch {
            expected: t,
            found: duals.pi.len(),
        });
    }
    let k = problem.tail_size();
    let mut primal = (weights.iter().sum::<f64>() - problem.budget_target()).abs();
    if problem.short_ban {
        primal = primal.max(weights.iter().map(|&w| (-w).max(0.0)).fold(0.0, f64::max));
    }
    let pi = &duals.pi;
    let mut dual = (pi.iter().sum::<f64>() - k).abs();
    for &p in pi {
        dual = dual.max((-p).max(p - 1.0).max(0.0));
    }
    let losses = problem.losses(weights)?;
    let eps = losses.tail_threshold(k);
    let mut complementarity: f64 = 0.0;
    for (&l, &p) in losses.losses().iter().zip(pi) {
        let u = (l - eps).max(0.0);
        let r = (eps - l).max(0.0);
        complementarity = complementarity.max((p * r).abs()).max(((1.0 - p) * u).abs());
    }
    let mut xpi = vec![0.0; n];
    for (x, &p) in problem.sample.observations().zip(pi) {
        for i in 0..n {
            xpi[i] += p * x[i];
        }
    }
    let radius = problem.reg.zero_subgradient_radius();
    let mut stationarity: f64 = 0.0;
    for i in 0..n {
        let c = xpi[i] + duals.lambda;
        let w = weights[i];
        let dist = if w.abs() <= ZERO_WEIGHT {
            if problem.short_ban {
                // w_i >= 0 adds the normal cone (-inf, 0] on the multiplier side
                (c - radius).max(0.0)
            } else {
                (c.abs() - radius).max(0.0)
            }
        } else {
            (problem.reg.unit_derivative(w) - c).abs()
        };
        stationarity = stationarity.max(dist);
    }
    Ok(KktReport {
        primal,
        dual,
        complementarity,
        stationarity,
    })
}
