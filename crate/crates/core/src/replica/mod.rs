//! Large-N saddle point of the regularized Expected Shortfall problem.
//!
//! In the limit `N, T -> inf` with `tau = T/N` fixed, the optimum is described
//! by six order parameters `(lambda, eps, q0, Delta, q0_hat, Delta_hat)`
//! that make the free energy
//!
//! ```text
//! F = lambda W + tau (1 - beta) eps - Delta q0_hat - Delta_hat q0
//!     + < min_w V(w, z) >_z + (tau Delta / 2) < g((eps + z sqrt(q0)) / Delta) >_z
//! V(w, z) = Delta_hat w^2 + penalty(w) - lambda w - z w s_hat
//! ```
//!
//! stationary, with `s_hat = sqrt(-2 q0_hat)` and `z` standard normal.
//!
//! Parameter translation (the code works in `s_hat`, never in `q0_hat`):
//!
//! | symbol      | field       | relation               |
//! |-------------|-------------|------------------------|
//! | `lambda`    | `lambda`    |                        |
//! | `eps`       | `epsilon`   |                        |
//! | `q0`        | `q0`        | `> 0`                  |
//! | `Delta`     | `delta`     | `> 0`                  |
//! | `q0_hat`    | `s_hat`     | `q0_hat = -s_hat^2/2`  |
//! | `Delta_hat` | `delta_hat` | `>= 0`                 |

mod free_energy;
mod potential;
mod saddle;
mod scan;

pub use free_energy::{free_energy, loss_averages, residuals, weight_moments, LossAverages, WeightMoments};
pub use potential::{g_fn, g_prime, potential, representative_weight, representative_weight_for_field};
pub use saddle::{initial_guess, solve_saddle, solve_saddle_with, SaddleOptions, Q0_CAP, DELTA_HAT_FLOOR, STALL_Q0_RATIO};
pub use scan::{phase_scan, phase_scan_with, Control, CriticalPoint, PhaseScan, ReplicaScanRow};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regularizer::RegularizerSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderParameters {
    pub lambda: f64,
    pub epsilon: f64,
    pub q0: f64,
    pub delta: f64,
    pub s_hat: f64,
    pub delta_hat: f64,
}

impl OrderParameters {
    pub fn q0_hat(&self) -> f64 {
        -0.5 * self.s_hat * self.s_hat
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.q0 > 0.0
            && self.delta > 0.0
            && self.s_hat >= 0.0
            && self.delta_hat >= 0.0
            && [self.lambda, self.epsilon, self.q0, self.delta, self.s_hat, self.delta_hat]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("inadmissible order parameters {self:?}")))
        }
    }

    /// `(lambda, eps, q0, Delta, s_hat, Delta_hat)`.
    pub fn to_array(&self) -> [f64; 6] {
        [self.lambda, self.epsilon, self.q0, self.delta, self.s_hat, self.delta_hat]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            lambda: v[0],
            epsilon: v[1],
            q0: v[2],
            delta: v[3],
            s_hat: v[4],
            delta_hat: v[5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaddleContext {
    pub tau: f64,
    pub beta: f64,
    pub reg: RegularizerSpec,
    /// Wealth per asset `W`.
    pub wealth: f64,
}

impl SaddleContext {
    pub fn new(tau: f64, beta: f64, reg: RegularizerSpec) -> Result<Self> {
        let ctx = Self {
            tau,
            beta,
            reg,
            wealth: 1.0,
        };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn with_wealth(mut self, wealth: f64) -> Self {
        self.wealth = wealth;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::invalid(format!("beta must lie in [0, 1), got {}", self.beta)));
        }
        if !(self.wealth.is_finite() && self.wealth > 0.0) {
            return Err(Error::invalid(format!("wealth must be positive, got {}", self.wealth)));
        }
        self.reg.validate()?;
        if self.reg.is_sublinear() {
            return Err(Error::invalid(format!(
                "the saddle-point equations need a convex penalty, got {}",
                self.reg
            )));
        }
        Ok(())
    }
}

/// Outcome of a saddle-point solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleSolution {
    pub params: OrderParameters,
    /// Partial derivatives of the free energy with respect to
    /// `(lambda, eps, q0, Delta, q0_hat, Delta_hat)`.
    pub residuals: [f64; 6],
    pub converged: bool,
    pub diverged: bool,
    /// Why the solution was classified as diverged.
    pub reason: Option<String>,
    /// `tau` of the last point reached along the continuation path.
    pub tau_reached: f64,
    pub iterations: usize,
}

impl SaddleSolution {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}
