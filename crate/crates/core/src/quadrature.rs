//! Averages over a standard normal variable.
//!
//! Smooth integrands use Gauss-Hermite rules with the change of variable
//! `z = sqrt(2) s`; two node counts are compared and a piecewise
//! Gauss-Legendre rule takes over when they disagree. Integrands with kinks
//! (soft thresholds, piecewise losses) go straight to the piecewise rule,
//! split at their breakpoints.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Node counts of the two Gauss-Hermite rules that are cross-checked.
pub const HERMITE_NODES: (usize, usize) = (128, 160);

/// Agreement required between the two Gauss-Hermite rules.
pub const HERMITE_AGREEMENT: f64 = 1e-9;

/// The piecewise rule integrates over `[-Z_MAX, Z_MAX]`.
pub const Z_MAX: f64 = 12.0;

const LEGENDRE_ORDER: usize = 20;

/// Nodes and weights for `E[f(z)]`, `z ~ N(0, 1)`.
#[derive(Debug, Clone)]
pub struct NormalRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl NormalRule {
    /// Gauss-Hermite rule with `n` nodes, rescaled to the standard normal.
    pub fn hermite(n: usize) -> Self {
        let (x, w) = gauss_hermite(n);
        let scale = 1.0 / PI.sqrt();
        Self {
            nodes: x.iter().map(|v| v * std::f64::consts::SQRT_2).collect(),
            weights: w.iter().map(|v| v * scale).collect(),
        }
    }

    /// Composite Gauss-Legendre rule on `[-Z_MAX, Z_MAX]` with panels of
    /// width at most `panel`, split at every breakpoint inside the range.
    pub fn piecewise(breakpoints: &[f64], panel: f64) -> Self {
        Self::graded(breakpoints, panel, 0)
    }

    /// Like [`NormalRule::piecewise`], with `levels` geometrically shrinking
    /// panels (ratio 1/4) on both sides of every breakpoint, for integrands
    /// with a non-smooth power-law behavior there.
    pub fn graded(breakpoints: &[f64], panel: f64, levels: usize) -> Self {
        let mut cuts: Vec<f64> = breakpoints
            .iter()
            .copied()
            .filter(|b| b.is_finite() && b.abs() < Z_MAX)
            .collect();
        cuts.push(-Z_MAX);
        cuts.push(Z_MAX);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let (gx, gw) = legendre();
        let norm = 1.0 / (2.0 * PI).sqrt();
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for pair in cuts.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b - a <= 0.0 {
                continue;
            }
            let mut edges = Vec::new();
            let (mut inner_a, mut inner_b) = (a, b);
            if levels > 0 {
                let len = panel.min(0.5 * (b - a));
                if a > -Z_MAX {
                    edges.extend((1..=levels).map(|j| a + len * 0.25f64.powi(j as i32)));
                    inner_a = a + len;
                }
                if b < Z_MAX {
                    edges.extend((1..=levels).map(|j| b - len * 0.25f64.powi(j as i32)));
                    inner_b = b - len;
                }
            }
            let m = ((inner_b - inner_a) / panel).ceil().max(1.0) as usize;
            edges.extend((0..=m).map(|j| inner_a + (inner_b - inner_a) * j as f64 / m as f64));
            edges.push(a);
            edges.push(b);
            edges.sort_by(f64::total_cmp);
            edges.dedup();
            for e in edges.windows(2) {
                let h = e[1] - e[0];
                if h <= 0.0 {
                    continue;
                }
                let mid = e[0] + 0.5 * h;
                for (x, w) in gx.iter().zip(gw) {
                    let z = mid + 0.5 * h * x;
                    nodes.push(z);
                    weights.push(0.5 * h * w * norm * (-0.5 * z * z).exp());
                }
            }
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        let mut terms: Vec<f64> = self.nodes.iter().zip(&self.weights).map(|(&z, &w)| w * f(z)).collect();
        pairwise_sum(&mut terms)
    }
}

/// Order-independent summation with small rounding error.
pub fn pairwise_sum(v: &mut [f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n if n <= 16 => v.iter().sum(),
        n => {
            let (a, b) = v.split_at_mut(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

fn hermite_rules() -> &'static (NormalRule, NormalRule) {
    static RULES: OnceLock<(NormalRule, NormalRule)> = OnceLock::new();
    RULES.get_or_init(|| (NormalRule::hermite(HERMITE_NODES.0), NormalRule::hermite(HERMITE_NODES.1)))
}

fn legendre() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(LEGENDRE_ORDER))
}

/// `E[f(z)]` for a smooth `f`.
///
/// Falls back to the piecewise rule, refined until two panel widths agree,
/// when the Gauss-Hermite rules disagree by more than [`HERMITE_AGREEMENT`].
pub fn gaussian_avg(f: impl Fn(f64) -> f64) -> Result<f64> {
    let (lo, hi) = hermite_rules();
    let a = lo.integrate(&f);
    let b = hi.integrate(&f);
    if (a - b).abs() <= HERMITE_AGREEMENT * b.abs().max(1.0) {
        return Ok(b);
    }
    adaptive_avg(&f, &[])
}

/// `E[f(z)]` for an `f` that is smooth between the given breakpoints.
pub fn gaussian_avg_split(f: impl Fn(f64) -> f64, breakpoints: &[f64]) -> Result<f64> {
    adaptive_avg(&f, breakpoints)
}

fn adaptive_avg(f: &dyn Fn(f64) -> f64, breakpoints: &[f64]) -> Result<f64> {
    let mut panel = 1.0;
    let mut prev = NormalRule::piecewise(breakpoints, panel).integrate(f);
    for _ in 0..8 {
        panel *= 0.5;
        let next = NormalRule::piecewise(breakpoints, panel).integrate(f);
        if (next - prev).abs() <= 1e-13 * next.abs().max(1.0) {
            return Ok(next);
        }
        prev = next;
    }
    if prev.is_finite() {
        Err(Error::Quadrature(format!(
            "piecewise rule still changing at panel width {panel}"
        )))
    } else {
        Err(Error::Quadrature("integrand is not finite".into()))
    }
}

/// Nodes and weights of `int e^{-s^2} f(s) ds` (physicists' Hermite).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0);
    let pim4 = PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Nodes and weights of `int_{-1}^{1} f(x) dx`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf - 1.0) * z * p2 - (jf - 1.0) * p3) / jf;
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Standard normal distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Inverse of [`normal_cdf`], refined by Newton steps from a rational
/// starting approximation.
pub fn normal_quantile(p: f64) -> f64 {
    if !(p > 0.0 && p < 1.0) {
        return if p <= 0.0 { f64::NEG_INFINITY } else { f64::INFINITY };
    }
    // Abramowitz-Stegun 26.2.23 start
    let q = if p < 0.5 { p } else { 1.0 - p };
    let t = (-2.0 * q.ln()).sqrt();
    let mut z = t - (2.515517 + 0.802853 * t + 0.010328 * t * t) / (1.0 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t * t * t);
    if p < 0.5 {
        z = -z;
    }
    for _ in 0..6 {
        let err = normal_cdf(z) - p;
        z -= err / normal_pdf(z).max(1e-300);
    }
    z
}
