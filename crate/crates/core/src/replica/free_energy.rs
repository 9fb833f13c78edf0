//! Free energy and its gradient.
//!
//! Writing `x(z) = (eps + z sqrt(q0)) / Delta`, the loss term is
//! `(tau Delta / 2) <g(x)>_z`, which equals the `int ds e^{-s^2}` form after
//! `s = z / sqrt(2)`. The gradient components, in the order
//! `(lambda, eps, q0, Delta, q0_hat, Delta_hat)`, are
//!
//! ```text
//! dF/dlambda    = W - <w*>
//! dF/deps       = tau (1 - beta) + (tau / 2) <g'(x)>
//! dF/dq0        = -Delta_hat + tau / (4 sqrt(q0)) <z g'(x)>
//! dF/dDelta     = -q0_hat + (tau / 2) <g(x) - x g'(x)>
//! dF/dq0_hat    = -Delta + <z w*> / s_hat
//! dF/dDelta_hat = -q0 + <w*^2>
//! ```
//!
//! The inner minimum contributes through the envelope theorem only. At a
//! stationary point these coincide with the textbook form of the first-order
//! conditions, in which the `Delta` equation has been simplified with the
//! `eps` and `q0` equations.

use super::potential::{g_fn, g_prime, minimizer};
use super::{OrderParameters, SaddleContext};
use crate::error::{Error, Result};
use crate::quadrature::{pairwise_sum, NormalRule};
use crate::regularizer::{PenaltyParts, RegularizerSpec};

const PANEL: f64 = 0.5;

/// Gaussian averages of the representative weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightMoments {
    /// `<w*>`
    pub mean: f64,
    /// `<w*^2>`
    pub second: f64,
    /// `<z w*>`
    pub cross: f64,
    /// `<dw*/dh>`, equal to `cross / s_hat` by Gaussian integration by parts.
    pub slope: f64,
    /// `<min_w V>`
    pub potential: f64,
    /// Probability that `w* = 0`.
    pub zero_mass: f64,
}

/// Gaussian averages of the loss kernel at `x = (eps + z sqrt(q0)) / Delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossAverages {
    /// `<g(x)>`
    pub g: f64,
    /// `<g'(x)>`
    pub g_prime: f64,
    /// `<z g'(x)>`
    pub z_g_prime: f64,
    /// `<x g'(x)>`
    pub x_g_prime: f64,
}

fn weight_rule(params: &OrderParameters, parts: &PenaltyParts) -> NormalRule {
    let s = params.s_hat;
    let mut cuts = Vec::with_capacity(3);
    if s > 0.0 {
        cuts.push((-params.lambda) / s);
        if parts.l1 > 0.0 {
            cuts.push((parts.l1 - params.lambda) / s);
            cuts.push((-parts.l1 - params.lambda) / s);
        }
    }
    // w* ~ |h|^(1/(p-1)) near h = 0 is not smooth for p > 2
    let levels = if parts.power_amp > 0.0 && parts.power > 2.0 { 14 } else { 0 };
    NormalRule::graded(&cuts, PANEL, levels)
}

pub fn weight_moments(params: &OrderParameters, reg: &RegularizerSpec) -> Result<WeightMoments> {
    let parts = reg.nonnegative_parts();
    let rule = weight_rule(params, &parts);
    let n = rule.len();
    let mut cols: [Vec<f64>; 6] = std::array::from_fn(|_| Vec::with_capacity(n));
    for (&z, &wt) in rule.nodes.iter().zip(&rule.weights) {
        let h = params.lambda + z * params.s_hat;
        let w = minimizer(h, params.delta_hat, &parts).ok_or(Error::UnboundedPotential)?;
        let v = params.delta_hat * w * w + parts.value(w.abs()) - h * w;
        let slope = if w == 0.0 {
            0.0
        } else {
            1.0 / (2.0 * params.delta_hat + parts.second(w.abs()))
        };
        cols[0].push(wt * w);
        cols[1].push(wt * w * w);
        cols[2].push(wt * z * w);
        cols[3].push(wt * slope);
        cols[4].push(wt * v);
        cols[5].push(if w == 0.0 { wt } else { 0.0 });
    }
    let [mut mean, mut second, mut cross, mut slope, mut potential, mut zero] = cols;
    Ok(WeightMoments {
        mean: pairwise_sum(&mut mean),
        second: pairwise_sum(&mut second),
        cross: pairwise_sum(&mut cross),
        slope: pairwise_sum(&mut slope),
        potential: pairwise_sum(&mut potential),
        zero_mass: pairwise_sum(&mut zero),
    })
}

pub fn loss_averages(epsilon: f64, q0: f64, delta: f64) -> LossAverages {
    let a = epsilon / delta;
    let b = q0.sqrt() / delta;
    let cuts = if b > 0.0 { vec![-a / b, (-1.0 - a) / b] } else { Vec::new() };
    let rule = NormalRule::piecewise(&cuts, PANEL);
    let n = rule.len();
    let mut g = Vec::with_capacity(n);
    let mut gp = Vec::with_capacity(n);
    let mut zgp = Vec::with_capacity(n);
    for (&z, &wt) in rule.nodes.iter().zip(&rule.weights) {
        let x = a + b * z;
        let d = g_prime(x);
        g.push(wt * g_fn(x));
        gp.push(wt * d);
        zgp.push(wt * z * d);
    }
    let g = pairwise_sum(&mut g);
    let g_prime = pairwise_sum(&mut gp);
    let z_g_prime = pairwise_sum(&mut zgp);
    LossAverages {
        g,
        g_prime,
        z_g_prime,
        x_g_prime: a * g_prime + b * z_g_prime,
    }
}

/// `F(lambda, eps, q0, Delta, q0_hat, Delta_hat)`.
pub fn free_energy(params: &OrderParameters, ctx: &SaddleContext) -> Result<f64> {
    params.validate()?;
    let m = weight_moments(params, &ctx.reg)?;
    let l = loss_averages(params.epsilon, params.q0, params.delta);
    Ok(params.lambda * ctx.wealth + ctx.tau * (1.0 - ctx.beta) * params.epsilon - params.delta * params.q0_hat()
        - params.delta_hat * params.q0
        + m.potential
        + 0.5 * ctx.tau * params.delta * l.g)
}

/// Gradient of the free energy with respect to
/// `(lambda, eps, q0, Delta, q0_hat, Delta_hat)`; it vanishes at the saddle.
pub fn residuals(params: &OrderParameters, ctx: &SaddleContext) -> Result<[f64; 6]> {
    params.validate()?;
    let m = weight_moments(params, &ctx.reg)?;
    let l = loss_averages(params.epsilon, params.q0, params.delta);
    Ok(residuals_from(params, ctx, &m, &l))
}

pub(super) fn residuals_from(
    params: &OrderParameters,
    ctx: &SaddleContext,
    m: &WeightMoments,
    l: &LossAverages,
) -> [f64; 6] {
    let tau = ctx.tau;
    let cross_over_s = if params.s_hat > 0.0 { m.cross / params.s_hat } else { m.slope };
    [
        ctx.wealth - m.mean,
        tau * (1.0 - ctx.beta) + 0.5 * tau * l.g_prime,
        -params.delta_hat + tau / (4.0 * params.q0.sqrt()) * l.z_g_prime,
        -params.q0_hat() + 0.5 * tau * (l.g - l.x_g_prime),
        -params.delta + cross_over_s,
        -params.q0 + m.second,
    ]
}
