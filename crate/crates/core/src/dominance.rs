//! Dominant portfolios: zero-cost directions that beat the market in every
//! observation, and the instability they cause under linear regularization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpStatus, Relation};
use crate::regularizer::RegularizerSpec;
use crate::returns::{dot, sample_returns, ReturnSample, VarianceConvention};
use crate::risk::{regularized_objective, EsConfig, LossSeries, RiskMeasure};
use crate::rng;

/// LP values at or below this are treated as "no dominant direction".
const POSITIVE_LEVEL: f64 = 1e-12;

/// A zero-sum direction `u` (`sum u = 0`, `|u|_1 = 1`) with its dominance level.
///
/// With `tail_size = 1` the level is `min_t u . x_t`. For a general tail size
/// `k` it is `-k ES_k(u)`, the rate at which the `k`-scaled shortfall falls
/// along `u`; the two agree at `k = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceCertificate {
    pub mu_star: f64,
    pub direction: Vec<f64>,
    pub margins: Vec<f64>,
    pub tail_size: f64,
}

impl DominanceCertificate {
    /// Builds a certificate from any nonzero zero-sum direction, normalizing it
    /// and recomputing the level from the data.
    pub fn from_direction(sample: &ReturnSample, direction: &[f64], tail_size: f64) -> Result<Self> {
        sample.check_weights(direction)?;
        let norm: f64 = direction.iter().map(|v| v.abs()).sum();
        if norm == 0.0 {
            return Err(Error::invalid("dominance direction must be nonzero"));
        }
        let mut u: Vec<f64> = direction.iter().map(|v| v / norm).collect();
        // remove rounding drift from the zero-sum constraint
        let drift = u.iter().sum::<f64>();
        if drift != 0.0 {
            let (pos, neg): (f64, f64) = u.iter().fold((0.0, 0.0), |(p, n), &v| {
                if v > 0.0 {
                    (p + v, n)
                } else {
                    (p, n - v)
                }
            });
            if pos > 0.0 && neg > 0.0 {
                let target = 0.5;
                for v in u.iter_mut() {
                    if *v > 0.0 {
                        *v *= target / pos;
                    } else {
                        *v *= target / neg;
                    }
                }
            }
        }
        let margins: Vec<f64> = sample.observations().map(|x| dot(x, &u)).collect();
        let losses = LossSeries::from_losses(margins.iter().map(|m| -m).collect());
        let mu_star = -tail_size * losses.tail_mean(tail_size);
        Ok(Self {
            mu_star,
            direction: u,
            margins,
            tail_size,
        })
    }

    pub fn min_margin(&self) -> f64 {
        self.margins.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Solves `max mu` subject to `u . x_t >= mu` for all `t`, `sum u = 0`,
/// `sum (u+ + u-) = 1`.
///
/// When no direction reaches a positive level, the LP optimum is the trivial
/// `u+ = u-`; the certificate then reports the best pairwise long-short
/// direction `(e_i - e_j) / 2`, which is exact for two assets and a lower
/// bound on the level otherwise.
pub fn max_dominance(sample: &ReturnSample) -> DominanceCertificate {
    let (n, t) = sample.dims();
    // variables: u+ (n), u- (n), mu+, mu-
    let nv = 2 * n + 2;
    let mut c = vec![0.0; nv];
    c[2 * n] = -1.0;
    c[2 * n + 1] = 1.0;
    let mut lp = LinearProgram::new(c);
    for x in sample.observations() {
        let mut row = Vec::with_capacity(nv);
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                row.push((i, xi));
                row.push((n + i, -xi));
            }
        }
        row.push((2 * n, -1.0));
        row.push((2 * n + 1, 1.0));
        lp.add_row(row, Relation::Ge, 0.0);
    }
    add_direction_rows(&mut lp, n);
    let sol = lp.solve();
    debug_assert_eq!(sol.status, LpStatus::Optimal, "dominance LP on {t} observations");
    finish(sample, &sol.x, -sol.objective, 1.0)
}

/// Tail-size generalization of [`max_dominance`]: maximizes `-k ES_k(u)` over
/// zero-sum directions with `|u|_1 = 1`.
///
/// A linear penalty of amplitude `eta` cannot stop the `k`-scaled shortfall
/// program from running off along `u` exactly when this level exceeds `eta`.
pub fn risk_dominance(sample: &ReturnSample, tail_size: f64) -> DominanceCertificate {
    let (level, x) = risk_dominance_lp(sample, tail_size);
    finish(sample, &x, level, tail_size)
}

/// Optimal level and raw LP point of the risk-dominance program.
pub(crate) fn risk_dominance_lp(sample: &ReturnSample, tail_size: f64) -> (f64, Vec<f64>) {
    let (n, t) = sample.dims();
    // variables: u+ (n), u- (n), eps+, eps-, v (t)
    let nv = 2 * n + 2 + t;
    let mut c = vec![0.0; nv];
    c[2 * n] = tail_size;
    c[2 * n + 1] = -tail_size;
    for ct in c.iter_mut().skip(2 * n + 2) {
        *ct = 1.0;
    }
    let mut lp = LinearProgram::new(c);
    for (s, x) in sample.observations().enumerate() {
        let mut row = Vec::with_capacity(2 * n + 3);
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                row.push((i, xi));
                row.push((n + i, -xi));
            }
        }
        row.push((2 * n, 1.0));
        row.push((2 * n + 1, -1.0));
        row.push((2 * n + 2 + s, 1.0));
        lp.add_row(row, Relation::Ge, 0.0);
    }
    add_direction_rows(&mut lp, n);
    let sol = lp.solve();
    debug_assert_eq!(sol.status, LpStatus::Optimal);
    (-sol.objective, sol.x)
}

fn add_direction_rows(lp: &mut LinearProgram, n: usize) {
    lp.add_row((0..n).map(|i| (i, 1.0)).chain((0..n).map(|i| (n + i, -1.0))).collect(), Relation::Eq, 0.0);
    lp.add_row((0..2 * n).map(|j| (j, 1.0)).collect(), Relation::Eq, 1.0);
}

pub(crate) fn finish(sample: &ReturnSample, x: &[f64], level: f64, tail_size: f64) -> DominanceCertificate {
    let n = sample.n_assets();
    let u: Vec<f64> = (0..n).map(|i| x[i] - x[n + i]).collect();
    if level > POSITIVE_LEVEL && u.iter().any(|&v| v != 0.0) {
        if let Ok(cert) = DominanceCertificate::from_direction(sample, &u, tail_size) {
            if cert.mu_star > POSITIVE_LEVEL {
                return cert;
            }
        }
    }
    best_pairwise(sample, tail_size)
}

fn best_pairwise(sample: &ReturnSample, tail_size: f64) -> DominanceCertificate {
    let n = sample.n_assets();
    let mut best: Option<DominanceCertificate> = None;
    if n < 2 {
        // no nonzero zero-sum direction exists
        return DominanceCertificate {
            mu_star: f64::NEG_INFINITY,
            direction: vec![0.0; n],
            margins: vec![0.0; sample.n_obs()],
            tail_size,
        };
    }
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut u = vec![0.0; n];
            u[i] = 0.5;
            u[j] = -0.5;
            let cert = DominanceCertificate::from_direction(sample, &u, tail_size)
                .expect("pairwise direction is nonzero");
            if best.as_ref().is_none_or(|b| cert.mu_star > b.mu_star) {
                best = Some(cert);
            }
        }
    }
    best.expect("at least one pair")
}

/// Checks that the regularized objective decreases at least linearly along
/// `w0 + a u` for every `a` in `a_grid`:
/// `obj(w0 + a u) <= obj(w0) - a (mu* - eta)(1 - 1e-6)`.
///
/// The objective is `k rho(w) + penalty(w)` with `k = cert.tail_size`
/// (Maximal Loss when `k = 1`). For penalties that grow faster than linearly
/// the bound fails at large `a` and the check returns `false`.
pub fn verify_unbounded_ray(
    sample: &ReturnSample,
    reg: &RegularizerSpec,
    w0: &[f64],
    cert: &DominanceCertificate,
    a_grid: &[f64],
) -> Result<bool> {
    let eta = match reg.canonical() {
        RegularizerSpec::ElasticNet { eta1, .. } => eta1,
        RegularizerSpec::PureLp { eta, .. } => eta,
    };
    if cert.mu_star <= eta {
        return Err(Error::invalid(format!(
            "ray verification needs mu* > eta (mu* = {}, eta = {eta})",
            cert.mu_star
        )));
    }
    let measure = measure_for_tail(cert.tail_size, sample.n_obs());
    let base = regularized_objective(measure, reg, w0, sample)?;
    let slope = (cert.mu_star - eta) * (1.0 - 1e-6);
    for &a in a_grid {
        if !(a > 0.0) {
            return Err(Error::invalid(format!("ray step must be positive, got {a}")));
        }
        let w: Vec<f64> = w0.iter().zip(&cert.direction).map(|(x, u)| x + a * u).collect();
        let value = regularized_objective(measure, reg, &w, sample)?;
        let scale: f64 = 1.0 + base.abs() + a * (1.0 + eta);
        if value > base - a * slope + 1e-10 * scale {
            return Ok(false);
        }
    }
    Ok(true)
}

/// The risk measure whose tail holds `k` of `n_obs` observations.
pub(crate) fn measure_for_tail(k: f64, n_obs: usize) -> RiskMeasure {
    if k == 1.0 {
        RiskMeasure::MaximalLoss
    } else {
        RiskMeasure::ExpectedShortfall(EsConfig {
            beta: 1.0 - k / n_obs as f64,
        })
    }
}

/// Probability that a dominant portfolio survives the L1 penalty `eta` in the
/// two-asset, two-observation unit-variance toy: `erfc(eta)^2 / 2`.
pub fn toy_probability(eta: f64) -> f64 {
    let e = libm::erfc(eta);
    0.5 * e * e
}

/// Fraction of samples whose dominance level exceeds `eta`, with a 95%
/// normal-approximation interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyEstimate {
    pub eta: f64,
    pub p_hat: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_samples: usize,
    pub n_unstable: usize,
    /// Samples with `|mu* - eta| <= 1e-8`, counted as stable.
    pub n_boundary: usize,
}

impl FrequencyEstimate {
    fn from_levels(eta: f64, levels: &[f64]) -> Self {
        let n = levels.len();
        let n_unstable = levels.iter().filter(|&&m| m > eta + 1e-8).count();
        let n_boundary = levels.iter().filter(|&&m| (m - eta).abs() <= 1e-8).count();
        let p = n_unstable as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        Self {
            eta,
            p_hat: p,
            std_error: se,
            ci_low: (p - 1.96 * se).max(0.0),
            ci_high: (p + 1.96 * se).min(1.0),
            n_samples: n,
            n_unstable,
            n_boundary,
        }
    }
}

/// Dominance levels of `n_samples` independent samples; sample `s` uses the
/// substream `(seed, s)`.
pub fn dominance_levels(
    n_assets: usize,
    n_obs: usize,
    n_samples: usize,
    seed: u64,
    convention: VarianceConvention,
) -> Result<Vec<f64>> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let sample = sample_returns(n_assets, n_obs, rng::substream_seed(seed, s as u64), convention)?;
            Ok(max_dominance(&sample).mu_star)
        })
        .collect()
}

/// Empirical probability that a dominant portfolio with level above `eta`
/// exists, on unit-variance samples.
pub fn instability_frequency(
    n_assets: usize,
    n_obs: usize,
    eta: f64,
    n_samples: usize,
    seed: u64,
) -> Result<FrequencyEstimate> {
    Ok(instability_sweep(n_assets, n_obs, &[eta], n_samples, seed)?.remove(0))
}

/// [`instability_frequency`] over a grid of `eta`, with the same samples at
/// every grid point.
pub fn instability_sweep(
    n_assets: usize,
    n_obs: usize,
    etas: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<FrequencyEstimate>> {
    let levels = dominance_levels(n_assets, n_obs, n_samples, seed, VarianceConvention::UnitVariance)?;
    Ok(etas.iter().map(|&eta| FrequencyEstimate::from_levels(eta, &levels)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(rows: &[&[f64]]) -> ReturnSample {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        ReturnSample::from_asset_rows(&rows, VarianceConvention::UnitVariance).unwrap()
    }

    #[test]
    fn simple_dominance() {
        let s = sample(&[&[1.0, 1.0], &[0.0, 0.0]]);
        let c = max_dominance(&s);
        assert!((c.mu_star - 0.5).abs() < 1e-12);
        assert!((c.direction[0] - 0.5).abs() < 1e-12);
        assert!((c.direction[1] + 0.5).abs() < 1e-12);
        assert!(c.direction.iter().sum::<f64>().abs() < 1e-12);
        assert!((c.min_margin() - c.mu_star).abs() < 1e-12);
    }

    #[test]
    fn antisymmetric_has_no_dominance() {
        let s = sample(&[&[1.0, -1.0], &[-1.0, 1.0]]);
        assert!(max_dominance(&s).mu_star <= 0.0);
    }

    /// For two assets the only unit zero-sum directions are +-(1/2, -1/2).
    fn two_asset_oracle(s: &ReturnSample) -> f64 {
        let mut a = f64::INFINITY;
        let mut b = f64::INFINITY;
        for t in 0..s.n_obs() {
            let d = (s.get(0, t) - s.get(1, t)) / 2.0;
            a = a.min(d);
            b = b.min(-d);
        }
        a.max(b)
    }

    #[test]
    fn two_asset_levels_and_slope_conditions() {
        for seed in 0..2000u64 {
            let s = sample_returns(2, 2, seed, VarianceConvention::UnitVariance).unwrap();
            let c = max_dominance(&s);
            assert!((c.mu_star - two_asset_oracle(&s)).abs() < 1e-12, "seed {seed}");
            for eta in [0.0, 0.3, 0.8] {
                let d: Vec<f64> = (0..2).map(|t| s.get(1, t) - s.get(0, t)).collect();
                let slope = d.iter().all(|&v| v > 2.0 * eta) || d.iter().all(|&v| v < -2.0 * eta);
                assert_eq!(c.mu_star > eta, slope, "seed {seed} eta {eta}");
            }
        }
    }

    #[test]
    fn unit_tail_risk_dominance_matches_max_dominance() {
        for seed in 0..200u64 {
            let s = sample_returns(4, 3, seed, VarianceConvention::UnitVariance).unwrap();
            let a = max_dominance(&s);
            let b = risk_dominance(&s, 1.0);
            if a.mu_star > 1e-9 || b.mu_star > 1e-9 {
                assert!((a.mu_star - b.mu_star).abs() < 1e-9, "seed {seed}");
            }
        }
    }

    #[test]
    fn ray_verification() {
        let s = sample(&[&[1.0, 1.0], &[0.0, 0.0]]);
        let c = max_dominance(&s);
        let l1 = RegularizerSpec::l1(0.1).unwrap();
        let w0 = [0.5, 0.5];
        assert!(verify_unbounded_ray(&s, &l1, &w0, &c, &[1.0, 10.0, 100.0]).unwrap());
        for a in [1.0, 10.0, 100.0] {
            let w = [0.5 + a * c.direction[0], 0.5 + a * c.direction[1]];
            let drop = regularized_objective(RiskMeasure::MaximalLoss, &l1, &w0, &s).unwrap()
                - regularized_objective(RiskMeasure::MaximalLoss, &l1, &w, &s).unwrap();
            assert!(drop >= 0.4 * a * (1.0 - 1e-6));
        }
        let l2 = RegularizerSpec::pure_lp(2.0, 0.1).unwrap();
        assert!(!verify_unbounded_ray(&s, &l2, &w0, &c, &[1.0, 10.0, 100.0]).unwrap());
        let big = RegularizerSpec::l1(0.6).unwrap();
        assert!(verify_unbounded_ray(&s, &big, &w0, &c, &[1.0]).is_err());
    }

    #[test]
    fn toy_closed_form() {
        assert!((toy_probability(0.0) - 0.5).abs() < 1e-15);
        assert!((toy_probability(1.0) - 0.012_371_5).abs() < 1e-6);
    }

    #[test]
    fn frequency_is_monotone_in_eta() {
        let est = instability_sweep(2, 2, &[0.0, 0.25, 0.5], 4000, 5).unwrap();
        assert!(est[0].p_hat >= est[1].p_hat && est[1].p_hat >= est[2].p_hat);
        assert!((est[0].p_hat - 0.5).abs() < 4.0 * est[0].std_error.max(1e-3));
    }

    fn permuted(s: &ReturnSample, assets: &[usize], times: &[usize]) -> ReturnSample {
        let rows: Vec<Vec<f64>> = assets
            .iter()
            .map(|&i| times.iter().map(|&t| s.get(i, t)).collect())
            .collect();
        ReturnSample::from_asset_rows(&rows, s.convention()).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn level_is_scale_equivariant(seed in 0u64..100_000, n in 2usize..5, t in 2usize..5, c in 0.1f64..10.0) {
            let s = sample_returns(n, t, seed, VarianceConvention::UnitVariance).unwrap();
            let a = max_dominance(&s);
            let scaled = s.map(|x| c * x);
            let b = max_dominance(&scaled);
            prop_assert!((b.mu_star - c * a.mu_star).abs() <= 1e-9 * (1.0 + c * a.mu_star.abs()));
            // the original argmax reaches the scaled optimum on the scaled data
            let re = DominanceCertificate::from_direction(&scaled, &a.direction, 1.0).unwrap();
            prop_assert!((re.mu_star - b.mu_star).abs() <= 1e-9 * (1.0 + b.mu_star.abs()));
        }

        #[test]
        fn level_is_permutation_invariant(seed in 0u64..100_000, n in 2usize..5, t in 2usize..5, rot in 0usize..5) {
            let s = sample_returns(n, t, seed, VarianceConvention::UnitVariance).unwrap();
            let assets: Vec<usize> = (0..n).map(|i| (i + rot) % n).rev().collect();
            let times: Vec<usize> = (0..t).map(|j| (j + rot) % t).collect();
            let p = permuted(&s, &assets, &times);
            prop_assert!((max_dominance(&s).mu_star - max_dominance(&p).mu_star).abs() < 1e-9);
        }

        #[test]
        fn level_nonincreasing_in_observations(seed in 0u64..100_000, n in 2usize..6, t in 2usize..6) {
            let s = sample_returns(n, t + 2, seed, VarianceConvention::UnitVariance).unwrap();
            let short = s.truncated(t).unwrap();
            prop_assert!(max_dominance(&s).mu_star <= max_dominance(&short).mu_star + 1e-9);
        }

        #[test]
        fn certificate_invariants(seed in 0u64..100_000, n in 2usize..7, t in 2usize..7) {
            let s = sample_returns(n, t, seed, VarianceConvention::UnitVariance).unwrap();
            let c = max_dominance(&s);
            prop_assert!(c.direction.iter().sum::<f64>().abs() < 1e-10);
            prop_assert!((c.direction.iter().map(|v| v.abs()).sum::<f64>() - 1.0).abs() < 1e-10);
            prop_assert!((c.min_margin() - c.mu_star).abs() < 1e-8);
        }
    }
}
