//! The loss kernel `g` and the representative-weight problem.

use super::OrderParameters;
use crate::error::{Error, Result};
use crate::regularizer::{PenaltyParts, RegularizerSpec};

/// `0` for `x >= 0`, `x^2` on `[-1, 0]`, `-2x - 1` below `-1`.
pub fn g_fn(x: f64) -> f64 {
    if x >= 0.0 {
        0.0
    } else if x >= -1.0 {
        x * x
    } else {
        -2.0 * x - 1.0
    }
}

pub fn g_prime(x: f64) -> f64 {
    if x >= 0.0 {
        0.0
    } else if x >= -1.0 {
        2.0 * x
    } else {
        -2.0
    }
}

/// `V(w, z) = Delta_hat w^2 + penalty(w) - lambda w - z w s_hat`.
pub fn potential(w: f64, z: f64, params: &OrderParameters, reg: &RegularizerSpec) -> f64 {
    params.delta_hat * w * w + reg.unit_penalty(w) - (params.lambda + z * params.s_hat) * w
}

/// Minimizer of `V(., z)`.
///
/// Returns [`Error::UnboundedPotential`] when `V` is unbounded below, which
/// happens for linear penalties at `Delta_hat = 0` once the field
/// `lambda + z s_hat` exceeds the L1 amplitude.
pub fn representative_weight(z: f64, params: &OrderParameters, reg: &RegularizerSpec) -> Result<f64> {
    representative_weight_for_field(params.lambda + z * params.s_hat, params.delta_hat, reg)
}

/// Minimizer of `Delta_hat w^2 + penalty(w) - h w` for the field `h`.
pub fn representative_weight_for_field(h: f64, delta_hat: f64, reg: &RegularizerSpec) -> Result<f64> {
    let parts = reg.nonnegative_parts();
    minimizer(h, delta_hat, &parts).ok_or(Error::UnboundedPotential)
}

pub(super) fn minimizer(h: f64, delta_hat: f64, parts: &PenaltyParts) -> Option<f64> {
    let c = h.abs() - parts.l1;
    if c <= 0.0 {
        return Some(0.0);
    }
    let quad = 2.0 * (delta_hat + parts.l2);
    let a = if parts.power_amp > 0.0 {
        power_root(c, quad, parts.power_amp, parts.power)
    } else if quad > 0.0 {
        c / quad
    } else {
        return None;
    };
    Some(a.copysign(h))
}

/// Root `a > 0` of `quad a + amp p a^(p-1) = c` for `c > 0`, `p > 1`.
fn power_root(c: f64, quad: f64, amp: f64, p: f64) -> f64 {
    let f = |a: f64| quad * a + amp * p * a.powf(p - 1.0) - c;
    let df = |a: f64| quad + amp * p * (p - 1.0) * a.powf(p - 2.0);
    // each term alone caps the root
    let mut hi = (c / (amp * p)).powf(1.0 / (p - 1.0));
    if quad > 0.0 {
        hi = hi.min(c / quad);
    }
    let mut lo = 0.0;
    let mut x = 0.5 * hi;
    for _ in 0..200 {
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = df(x);
        let step = fx / d;
        if step.abs() <= 1e-16 * x || hi - lo <= 1e-15 * hi {
            return x;
        }
        let newton = x - step;
        x = if d.is_finite() && d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    x
}
