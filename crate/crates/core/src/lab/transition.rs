//! Location of the feasible-infeasible transition in a Monte Carlo sweep.

use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::PhaseScanRow;
use crate::error::{Error, Result};
use crate::rng;

pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Keeps the fit finite on perfectly separated data, where the maximum
/// likelihood slope is infinite and the midpoint lands mid-gap.
const SLOPE_RIDGE: f64 = 1e-6;

/// Logistic fit `P(unbounded) = 1 / (1 + exp(-slope (x - midpoint)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionEstimate {
    pub midpoint: f64,
    pub slope: f64,
    /// Percentile bootstrap interval at `confidence`.
    pub midpoint_ci: (f64, f64),
    pub slope_ci: (f64, f64),
    pub confidence: f64,
    /// Midpoints of the bootstrap fits, in resample order.
    pub bootstrap_midpoints: Vec<f64>,
}

pub fn transition_locator(rows: &[PhaseScanRow], seed: u64) -> Result<TransitionEstimate> {
    transition_locator_with(rows, seed, BOOTSTRAP_RESAMPLES, 0.95)
}

/// Fits the fraction of unbounded samples against the control value and
/// bootstraps the fit by redrawing each point's unbounded count from a
/// binomial with the observed fraction.
pub fn transition_locator_with(
    rows: &[PhaseScanRow],
    seed: u64,
    resamples: usize,
    confidence: f64,
) -> Result<TransitionEstimate> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::invalid(format!("confidence must lie in (0, 1), got {confidence}")));
    }
    let pts: Vec<(f64, u64, u64)> = rows
        .iter()
        .filter(|r| r.n_decided() > 0)
        .map(|r| (r.control_value, r.n_unbounded as u64, r.n_decided() as u64))
        .collect();
    let below = pts.iter().any(|&(_, k, n)| 2 * k < n);
    let above = pts.iter().any(|&(_, k, n)| 2 * k > n);
    if !(below && above) {
        return Err(Error::NoCrossing);
    }
    let (midpoint, slope) = fit(&pts)?;

    let mut mids = Vec::with_capacity(resamples);
    let mut slopes = Vec::with_capacity(resamples);
    for b in 0..resamples {
        let mut r = rng::substream(seed, b as u64);
        let boot: Vec<(f64, u64, u64)> = pts
            .iter()
            .map(|&(x, k, n)| {
                let p = k as f64 / n as f64;
                let draw = Binomial::new(n, p).expect("valid binomial").sample(&mut r);
                (x, draw, n)
            })
            .collect();
        if let Ok((m, s)) = fit(&boot) {
            mids.push(m);
            slopes.push(s);
        }
    }
    if mids.is_empty() {
        return Err(Error::NoConvergence {
            iterations: resamples,
            residual: f64::NAN,
        });
    }
    let alpha = 0.5 * (1.0 - confidence);
    let ci = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        (quantile(&s, alpha), quantile(&s, 1.0 - alpha))
    };
    Ok(TransitionEstimate {
        midpoint,
        slope,
        midpoint_ci: ci(&mids),
        slope_ci: ci(&slopes),
        confidence,
        bootstrap_midpoints: mids,
    })
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

/// Penalized binomial maximum likelihood on standardized `x`, by damped Newton.
fn fit(pts: &[(f64, u64, u64)]) -> Result<(f64, f64)> {
    let m = pts.len() as f64;
    let mean = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let sd = (pts.iter().map(|p| (p.0 - mean).powi(2)).sum::<f64>() / m).sqrt();
    if !(sd > 0.0) {
        return Err(Error::invalid("logistic fit needs at least two distinct control values"));
    }
    let data: Vec<(f64, f64, f64)> = pts.iter().map(|&(x, k, n)| ((x - mean) / sd, k as f64, n as f64)).collect();
    let loglik = |a: f64, b: f64| -> f64 {
        let mut l = -0.5 * SLOPE_RIDGE * b * b;
        for &(u, k, n) in &data {
            let eta = a + b * u;
            // log p = -softplus(-eta), log(1 - p) = -softplus(eta)
            l -= k * softplus(-eta) + (n - k) * softplus(eta);
        }
        l
    };
    let (mut a, mut b) = (0.0, 1.0);
    let mut cur = loglik(a, b);
    for _ in 0..500 {
        let (mut ga, mut gb) = (0.0, -SLOPE_RIDGE * b);
        let (mut haa, mut hab, mut hbb) = (0.0, 0.0, SLOPE_RIDGE);
        for &(u, k, n) in &data {
            let p = sigmoid(a + b * u);
            let r = k - n * p;
            let w = n * p * (1.0 - p);
            ga += r;
            gb += r * u;
            haa += w;
            hab += w * u;
            hbb += w * u * u;
        }
        let det = haa * hbb - hab * hab;
        if ga.abs() + gb.abs() < 1e-10 {
            break;
        }
        let (da, db) = if det > 1e-300 {
            ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det)
        } else {
            (ga, gb)
        };
        let mut step = 1.0;
        let mut moved = false;
        while step > 1e-12 {
            let (na, nb) = (a + step * da, b + step * db);
            let l = loglik(na, nb);
            if l >= cur {
                moved = l > cur;
                a = na;
                b = nb;
                cur = l;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    if !(b > 0.0) {
        return Err(Error::NoCrossing);
    }
    Ok((mean - sd * a / b, b / sd))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
