//! Empirical risk estimators on historical samples.

mod coherence;

pub use coherence::{coherence_check, Axiom, CoherenceReport, Violation};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regularizer::RegularizerSpec;
use crate::returns::{dot, ReturnSample};

const INTEGER_TOL: f64 = 1e-9;

/// Expected Shortfall at quantile `beta`: the mean loss over the worst
/// `(1 - beta) T` observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsConfig {
    pub beta: f64,
}

impl Default for EsConfig {
    fn default() -> Self {
        Self { beta: 0.7 }
    }
}

impl EsConfig {
    pub fn new(beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::invalid(format!("beta must lie in [0, 1), got {beta}")));
        }
        Ok(Self { beta })
    }

    /// The configuration for which ES on `n_obs` observations is the Maximal Loss.
    pub fn maximal_loss_limit(n_obs: usize) -> Self {
        Self {
            beta: 1.0 - 1.0 / n_obs as f64,
        }
    }

    /// Tail size `k = (1 - beta) T`, snapped to an integer when within 1e-9 of one.
    pub fn tail_size(&self, n_obs: usize) -> Result<f64> {
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::invalid(format!("beta must lie in [0, 1), got {}", self.beta)));
        }
        let k = snap((1.0 - self.beta) * n_obs as f64);
        if k < 1.0 {
            return Err(Error::DegenerateTail(k));
        }
        Ok(k)
    }
}

fn snap(k: f64) -> f64 {
    let r = k.round();
    if (k - r).abs() <= INTEGER_TOL * k.max(1.0) {
        r
    } else {
        k
    }
}

/// Which empirical risk measure an optimization or evaluation targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RiskMeasure {
    MaximalLoss,
    ExpectedShortfall(EsConfig),
}

impl RiskMeasure {
    pub fn es(beta: f64) -> Result<Self> {
        Ok(RiskMeasure::ExpectedShortfall(EsConfig::new(beta)?))
    }

    /// Number of tail observations averaged (1 for Maximal Loss).
    pub fn tail_size(&self, n_obs: usize) -> Result<f64> {
        match self {
            RiskMeasure::MaximalLoss => Ok(1.0),
            RiskMeasure::ExpectedShortfall(cfg) => cfg.tail_size(n_obs),
        }
    }
}

/// Loss of a fixed portfolio at each observation: `l_t = -w . x_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSeries {
    losses: Vec<f64>,
}

impl LossSeries {
    pub fn new(weights: &[f64], sample: &ReturnSample) -> Result<Self> {
        sample.check_weights(weights)?;
        Ok(Self {
            losses: sample.observations().map(|x| -dot(x, weights)).collect(),
        })
    }

    pub fn from_losses(losses: Vec<f64>) -> Self {
        Self { losses }
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.losses.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Mean of the `k` largest losses, with a fractional weight `k - floor(k)`
    /// on the next one when `k` is not an integer.
    pub fn tail_mean(&self, k: f64) -> f64 {
        let sorted = self.sorted_desc();
        tail_mean_sorted(&sorted, k)
    }

    /// Smallest minimizer of `eps + (1/k) sum_t max(0, l_t - eps)`: the
    /// `(floor(k) + 1)`-th largest loss.
    pub fn tail_threshold(&self, k: f64) -> f64 {
        let sorted = self.sorted_desc();
        let idx = (k.floor() as usize).min(sorted.len() - 1);
        sorted[idx]
    }

    fn sorted_desc(&self) -> Vec<f64> {
        let mut v = self.losses.clone();
        v.sort_unstable_by(|a, b| b.total_cmp(a));
        v
    }

    /// Weight of each observation in the tail average (sums to `k`); ties at the
    /// threshold are broken by index.
    pub fn tail_weights(&self, k: f64) -> Vec<f64> {
        let mut order: Vec<usize> = (0..self.losses.len()).collect();
        order.sort_by(|&a, &b| self.losses[b].total_cmp(&self.losses[a]).then(a.cmp(&b)));
        let mut out = vec![0.0; self.losses.len()];
        let full = k.floor() as usize;
        for &t in order.iter().take(full) {
            out[t] = 1.0;
        }
        let frac = k - full as f64;
        if frac > 0.0 && full < order.len() {
            out[order[full]] = frac;
        }
        out
    }
}

pub(crate) fn tail_mean_sorted(sorted_desc: &[f64], k: f64) -> f64 {
    let full = (k.floor() as usize).min(sorted_desc.len());
    let mut sum: f64 = sorted_desc[..full].iter().sum();
    let frac = k - full as f64;
    if frac > 0.0 && full < sorted_desc.len() {
        sum += frac * sorted_desc[full];
    }
    sum / k
}

/// `max_t (-w . x_t)`.
pub fn maximal_loss(weights: &[f64], sample: &ReturnSample) -> Result<f64> {
    Ok(LossSeries::new(weights, sample)?.max())
}

/// Historical Expected Shortfall
/// `min_eps [eps + 1/((1 - beta) T) sum_t max(0, -w . x_t - eps)]`.
///
/// When `(1 - beta) T` is an integer `k` this is the mean of the `k` largest
/// losses.
pub fn expected_shortfall(weights: &[f64], sample: &ReturnSample, cfg: EsConfig) -> Result<f64> {
    let k = cfg.tail_size(sample.n_obs())?;
    Ok(LossSeries::new(weights, sample)?.tail_mean(k))
}

/// The regularized program objective `k * rho(w) + penalty(w)`, where `k` is
/// the tail size (1 for Maximal Loss). For Expected Shortfall this equals
/// `min_eps [(1 - beta) T eps + sum_t max(0, -w . x_t - eps)] + penalty(w)`.
pub fn regularized_objective(
    measure: RiskMeasure,
    reg: &RegularizerSpec,
    weights: &[f64],
    sample: &ReturnSample,
) -> Result<f64> {
    let k = measure.tail_size(sample.n_obs())?;
    Ok(k * measure.evaluate(weights, sample)? + reg.penalty(weights))
}

/// A scalar risk functional of a portfolio on a sample.
pub trait RiskEstimator: Sync {
    fn name(&self) -> String;
    fn evaluate(&self, weights: &[f64], sample: &ReturnSample) -> Result<f64>;
}

impl RiskEstimator for RiskMeasure {
    fn name(&self) -> String {
        match self {
            RiskMeasure::MaximalLoss => "maximal_loss".into(),
            RiskMeasure::ExpectedShortfall(cfg) => format!("expected_shortfall(beta={})", cfg.beta),
        }
    }

    fn evaluate(&self, weights: &[f64], sample: &ReturnSample) -> Result<f64> {
        match self {
            RiskMeasure::MaximalLoss => maximal_loss(weights, sample),
            RiskMeasure::ExpectedShortfall(cfg) => expected_shortfall(weights, sample, *cfg),
        }
    }
}

/// Sample variance of the portfolio return. Not coherent; kept as a negative
/// control for the axiom checks.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmpiricalVariance;

impl RiskEstimator for EmpiricalVariance {
    fn name(&self) -> String {
        "empirical_variance".into()
    }

    fn evaluate(&self, weights: &[f64], sample: &ReturnSample) -> Result<f64> {
        let r = sample.portfolio_returns(weights)?;
        let n = r.len() as f64;
        let mean = r.iter().sum::<f64>() / n;
        Ok(r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n)
    }
}
