//! Newton solver for the saddle point, with continuation.
//!
//! Unknowns are `(lambda, eps, ln q0, ln Delta, ln s_hat, ln Delta_hat)`, so
//! positivity holds along every iterate. The Jacobian is taken by central
//! differences and steps are damped Levenberg-Marquardt style when the plain
//! Newton step does not reduce the residual.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::free_energy::{loss_averages, residuals_from, weight_moments};
use super::{OrderParameters, SaddleContext, SaddleSolution};
use crate::error::{Error, Result};
use crate::quadrature::{normal_pdf, normal_quantile};
use crate::regularizer::RegularizerSpec;

/// `q0` above this counts as divergence.
pub const Q0_CAP: f64 = 1e8;

/// `Delta_hat` below this counts as divergence.
pub const DELTA_HAT_FLOOR: f64 = 1e-8;

/// A stalled continuation with `q0 / W^2` above this is classified as diverged.
pub const STALL_Q0_RATIO: f64 = 100.0;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SaddleOptions {
    /// Bound on the largest residual.
    pub tol: f64,
    pub max_newton: usize,
    /// `tau` at which a cold start begins before continuing to the target.
    pub start_tau: f64,
    /// Smallest continuation step (in the homotopy parameter) before the
    /// path is declared stalled.
    pub min_step: f64,
}

impl Default for SaddleOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_newton: 60,
            start_tau: 20.0,
            min_step: 1e-6,
        }
    }
}

/// Asymptotic solution for large `tau`, where the weights concentrate at `W`
/// and the loss kernel acts as a sharp shortfall threshold at the `beta`
/// quantile.
pub fn initial_guess(ctx: &SaddleContext) -> OrderParameters {
    let w = ctx.wealth;
    let beta = ctx.beta.max(1e-3);
    let zb = normal_quantile(beta);
    let dens = normal_pdf(zb);
    let delta_hat = ctx.tau * dens / (2.0 * w);
    let parts = ctx.reg.nonnegative_parts();
    OrderParameters {
        lambda: 2.0 * delta_hat * w + parts.first(w),
        epsilon: w * zb,
        q0: w * w,
        delta: 1.0 / (2.0 * delta_hat + parts.second(w)),
        s_hat: (ctx.tau * (1.0 - beta)).sqrt(),
        delta_hat,
    }
}

fn to_y(p: &OrderParameters) -> [f64; 6] {
    [
        p.lambda,
        p.epsilon,
        p.q0.ln(),
        p.delta.ln(),
        p.s_hat.max(1e-300).ln(),
        p.delta_hat.max(1e-300).ln(),
    ]
}

fn from_y(y: &[f64; 6]) -> OrderParameters {
    OrderParameters {
        lambda: y[0],
        epsilon: y[1],
        q0: y[2].exp(),
        delta: y[3].exp(),
        s_hat: y[4].exp(),
        delta_hat: y[5].exp(),
    }
}

fn eval(ctx: &SaddleContext, y: &[f64; 6]) -> Option<[f64; 6]> {
    let p = from_y(y);
    if p.validate().is_err() {
        return None;
    }
    let m = weight_moments(&p, &ctx.reg).ok()?;
    let l = loss_averages(p.epsilon, p.q0, p.delta);
    let r = residuals_from(&p, ctx, &m, &l);
    r.iter().all(|v| v.is_finite()).then_some(r)
}

fn norm2(r: &[f64; 6]) -> f64 {
    r.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn max_abs(r: &[f64; 6]) -> f64 {
    r.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn cap_reason(p: &OrderParameters) -> Option<String> {
    if p.q0 > Q0_CAP {
        Some(format!("q0 = {:.3e} exceeded the cap {Q0_CAP:e}", p.q0))
    } else if p.delta_hat < DELTA_HAT_FLOOR {
        Some(format!("Delta_hat = {:.3e} fell below {DELTA_HAT_FLOOR:e}", p.delta_hat))
    } else {
        None
    }
}

enum Newton {
    Converged { y: [f64; 6], r: [f64; 6], iterations: usize },
    Capped { y: [f64; 6], reason: String, iterations: usize },
    Failed { residual: f64, iterations: usize },
}

fn newton(ctx: &SaddleContext, y0: [f64; 6], opts: &SaddleOptions) -> Newton {
    let mut y = y0;
    let Some(mut r) = eval(ctx, &y) else {
        return Newton::Failed {
            residual: f64::INFINITY,
            iterations: 0,
        };
    };
    let goal = 1e-2 * opts.tol;
    for it in 0..opts.max_newton {
        let p = from_y(&y);
        if let Some(reason) = cap_reason(&p) {
            return Newton::Capped { y, reason, iterations: it };
        }
        if max_abs(&r) <= goal {
            return Newton::Converged { y, r, iterations: it };
        }
        let Some(jac) = jacobian(ctx, &y) else {
            break;
        };
        let rv = DVector::from_column_slice(&r);
        let mut accepted = false;
        let base = norm2(&r);
        // plain Newton first, then increasingly damped steps
        for damping in [0.0, 1e-8, 1e-6, 1e-4, 1e-2, 1.0, 1e2] {
            let Some(step) = lm_step(&jac, &rv, damping) else {
                continue;
            };
            let mut scale = 1.0;
            // keep log-parameter moves below a factor e^3 per step
            let biggest = (2..6).map(|j| step[j].abs()).fold(0.0, f64::max);
            if biggest > 3.0 {
                scale = 3.0 / biggest;
            }
            let mut trial = y;
            for j in 0..6 {
                trial[j] += scale * step[j];
            }
            if let Some(rt) = eval(ctx, &trial) {
                if norm2(&rt) < base {
                    y = trial;
                    r = rt;
                    accepted = true;
                    break;
                }
            }
        }
        if !accepted {
            if max_abs(&r) <= opts.tol {
                return Newton::Converged { y, r, iterations: it };
            }
            if let Some(reason) = cap_reason(&from_y(&y)) {
                return Newton::Capped { y, reason, iterations: it };
            }
            return Newton::Failed {
                residual: max_abs(&r),
                iterations: it,
            };
        }
    }
    if max_abs(&r) <= opts.tol {
        return Newton::Converged {
            y,
            r,
            iterations: opts.max_newton,
        };
    }
    if let Some(reason) = cap_reason(&from_y(&y)) {
        return Newton::Capped {
            y,
            reason,
            iterations: opts.max_newton,
        };
    }
    Newton::Failed {
        residual: max_abs(&r),
        iterations: opts.max_newton,
    }
}

fn jacobian(ctx: &SaddleContext, y: &[f64; 6]) -> Option<DMatrix<f64>> {
    let mut jac = DMatrix::zeros(6, 6);
    for j in 0..6 {
        let h = 1e-6 * y[j].abs().max(1.0);
        let mut yp = *y;
        let mut ym = *y;
        yp[j] += h;
        ym[j] -= h;
        let rp = eval(ctx, &yp)?;
        let rm = eval(ctx, &ym)?;
        for i in 0..6 {
            jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    Some(jac)
}

fn lm_step(jac: &DMatrix<f64>, r: &DVector<f64>, damping: f64) -> Option<DVector<f64>> {
    let step = if damping == 0.0 {
        jac.clone().lu().solve(&(-r))?
    } else {
        let jtj = jac.transpose() * jac;
        let mut a = jtj.clone();
        for i in 0..6 {
            a[(i, i)] += damping * jtj[(i, i)].max(1e-12);
        }
        a.lu().solve(&(-(jac.transpose() * r)))?
    };
    step.iter().all(|v| v.is_finite()).then_some(step)
}

/// Regularizer on the straight line between `a` and `b`, when both belong to
/// the same family.
fn blend(a: &RegularizerSpec, b: &RegularizerSpec, t: f64) -> Option<RegularizerSpec> {
    let lerp = |x: f64, y: f64| x + (y - x) * t;
    match (a.canonical(), b.canonical()) {
        (RegularizerSpec::ElasticNet { eta1: a1, eta2: a2 }, RegularizerSpec::ElasticNet { eta1: b1, eta2: b2 }) => {
            Some(RegularizerSpec::ElasticNet {
                eta1: lerp(a1, b1),
                eta2: lerp(a2, b2),
            })
        }
        (RegularizerSpec::PureLp { p: pa, eta: ea }, RegularizerSpec::PureLp { p: pb, eta: eb }) if pa == pb => {
            Some(RegularizerSpec::PureLp { p: pa, eta: lerp(ea, eb) })
        }
        (RegularizerSpec::ElasticNet { eta1: 0.0, eta2: 0.0 }, RegularizerSpec::PureLp { p, eta }) => {
            Some(RegularizerSpec::PureLp { p, eta: eta * t })
        }
        (RegularizerSpec::PureLp { p, eta }, RegularizerSpec::ElasticNet { eta1: 0.0, eta2: 0.0 }) => {
            Some(RegularizerSpec::PureLp { p, eta: eta * (1.0 - t) })
        }
        _ => None,
    }
}

fn interpolate(from: &SaddleContext, to: &SaddleContext, t: f64) -> SaddleContext {
    if t >= 1.0 {
        return *to;
    }
    SaddleContext {
        tau: from.tau.powf(1.0 - t) * to.tau.powf(t),
        beta: from.beta + (to.beta - from.beta) * t,
        reg: blend(&from.reg, &to.reg, t).unwrap_or(to.reg),
        wealth: from.wealth + (to.wealth - from.wealth) * t,
    }
}

fn finish(ctx: &SaddleContext, y: &[f64; 6], r: [f64; 6], iterations: usize) -> SaddleSolution {
    SaddleSolution {
        params: from_y(y),
        residuals: r,
        converged: true,
        diverged: false,
        reason: None,
        tau_reached: ctx.tau,
        iterations,
    }
}

fn diverged(ctx: &SaddleContext, y: &[f64; 6], reason: String, iterations: usize) -> SaddleSolution {
    let params = from_y(y);
    let residuals = eval(ctx, y).unwrap_or([f64::NAN; 6]);
    SaddleSolution {
        params,
        residuals,
        converged: false,
        diverged: true,
        reason: Some(reason),
        tau_reached: ctx.tau,
        iterations,
    }
}

/// Follows the solution from `(from, start)` to `to` along a homotopy in
/// `ln tau`, `beta` and the penalty amplitudes.
pub(super) fn follow(
    from: &SaddleContext,
    start: &OrderParameters,
    to: &SaddleContext,
    opts: &SaddleOptions,
) -> Result<SaddleSolution> {
    let mut t: f64 = 0.0;
    let mut y = to_y(start);
    let mut prev: Option<(f64, [f64; 6])> = None;
    let mut dt = 1.0;
    let mut iterations = 0;
    let start_dh = start.delta_hat;
    // a good predictor converges in a few steps; slow progress means the
    // continuation step is too long
    let step_opts = SaddleOptions {
        max_newton: opts.max_newton.min(12),
        ..*opts
    };
    loop {
        let t_next = (t + dt).min(1.0);
        let ctx = interpolate(from, to, t_next);
        let predicted = match prev {
            Some((tp, yp)) if t > tp => {
                let f = (t_next - t) / (t - tp);
                let mut g = y;
                for j in 0..6 {
                    g[j] += f * (y[j] - yp[j]);
                }
                g
            }
            _ => y,
        };
        let mut outcome = newton(&ctx, predicted, &step_opts);
        if matches!(outcome, Newton::Failed { .. }) && predicted != y {
            outcome = newton(&ctx, y, &step_opts);
        }
        match outcome {
            Newton::Converged { y: yn, r, iterations: it } => {
                iterations += it;
                prev = Some((t, y));
                y = yn;
                t = t_next;
                if t >= 1.0 {
                    return Ok(finish(to, &y, r, iterations));
                }
                dt = (dt * 2.0).min(1.0 - t);
            }
            Newton::Capped { y: yc, reason, iterations: it } => {
                iterations += it;
                return Ok(diverged(&ctx, &yc, reason, iterations));
            }
            Newton::Failed {
                residual, iterations: it, ..
            } => {
                iterations += it;
                dt *= 0.5;
                if dt < opts.min_step {
                    let here = from_y(&y);
                    let ctx_here = interpolate(from, to, t);
                    if here.q0 > STALL_Q0_RATIO * to.wealth * to.wealth || here.delta_hat < 1e-2 * start_dh {
                        return Ok(diverged(
                            &ctx_here,
                            &y,
                            format!(
                                "continuation stalled at tau = {} with q0 = {:.3e}, Delta_hat = {:.3e}",
                                ctx_here.tau, here.q0, here.delta_hat
                            ),
                            iterations,
                        ));
                    }
                    return Err(Error::NoConvergence { iterations, residual });
                }
            }
        }
    }
}

/// Solves the saddle-point equations at `ctx`.
///
/// Without `init`, the solve starts from the asymptotic large-`tau` solution
/// at `max(tau, start_tau)` and follows it down to `ctx.tau`. With `init`,
/// Newton starts there and the cold-start path is used only if that fails.
///
/// A solution whose `q0` exceeds [`Q0_CAP`] or whose `Delta_hat` drops below
/// [`DELTA_HAT_FLOOR`] anywhere along the way is returned with
/// `diverged = true`.
pub fn solve_saddle(ctx: &SaddleContext, init: Option<&OrderParameters>) -> Result<SaddleSolution> {
    solve_saddle_with(ctx, init, &SaddleOptions::default())
}

pub fn solve_saddle_with(
    ctx: &SaddleContext,
    init: Option<&OrderParameters>,
    opts: &SaddleOptions,
) -> Result<SaddleSolution> {
    ctx.validate()?;
    if let Some(p) = init {
        p.validate()?;
        match newton(ctx, to_y(p), opts) {
            Newton::Converged { y, r, iterations } => return Ok(finish(ctx, &y, r, iterations)),
            Newton::Capped { y, reason, iterations } => return Ok(diverged(ctx, &y, reason, iterations)),
            Newton::Failed { .. } => {}
        }
    }
    let mut tau0 = ctx.tau.max(opts.start_tau);
    let mut last_err = None;
    for _ in 0..6 {
        let start_ctx = SaddleContext { tau: tau0, ..*ctx };
        match newton(&start_ctx, to_y(&initial_guess(&start_ctx)), opts) {
            Newton::Converged { y, r, iterations } => {
                if tau0 == ctx.tau {
                    return Ok(finish(ctx, &y, r, iterations));
                }
                return follow(&start_ctx, &from_y(&y), ctx, opts);
            }
            Newton::Capped { reason, .. } => {
                last_err = Some(Error::Diverged { tau: tau0, reason });
            }
            Newton::Failed { residual, iterations, .. } => {
                last_err = Some(Error::NoConvergence { iterations, residual });
            }
        }
        tau0 *= 4.0;
    }
    Err(last_err.expect("at least one attempt"))
}
