//! Randomized checks of the coherence axioms on an estimator.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::RiskEstimator;
use crate::error::Result;
use crate::returns::ReturnSample;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axiom {
    Normalization,
    PositiveHomogeneity,
    Translation,
    Subadditivity,
    Monotonicity,
}

impl Axiom {
    pub const ALL: [Axiom; 5] = [
        Axiom::Normalization,
        Axiom::PositiveHomogeneity,
        Axiom::Translation,
        Axiom::Subadditivity,
        Axiom::Monotonicity,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub axiom: Axiom,
    pub instance_seed: u64,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub estimator: String,
    pub n_instances: usize,
    pub tolerance: f64,
    pub violations: Vec<Violation>,
}

impl CoherenceReport {
    pub fn count(&self, axiom: Axiom) -> usize {
        self.violations.iter().filter(|v| v.axiom == axiom).count()
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Evaluates the five coherence axioms on every sample of `samples`.
///
/// For each sample, random weights `w1, w2`, a scale `a > 0` and a cash shift
/// `c` are drawn from a substream of the sample seed; monotonicity compares
/// non-negative weights on `X` and on `X + |D|` for a random `D`. A check
/// fails when its defect exceeds `tolerance * max(1, |terms|)`.
pub fn coherence_check(
    estimator: &dyn RiskEstimator,
    samples: &[ReturnSample],
    tolerance: f64,
) -> Result<CoherenceReport> {
    let mut violations = Vec::new();
    for (idx, sample) in samples.iter().enumerate() {
        let seed = sample.seed();
        let mut r = rng::substream(seed, idx as u64);
        let n = sample.n_assets();
        let normal = |r: &mut rand_chacha::ChaCha8Rng| -> f64 { StandardNormal.sample(r) };
        let w1: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
        let w2: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
        let a: f64 = (r.random::<f64>() * 6.0 - 3.0).exp();
        let c: f64 = 2.0 * normal(&mut r);
        let mut report = |axiom: Axiom, defect: f64, scale: f64| {
            if defect > tolerance * scale.max(1.0) {
                violations.push(Violation {
                    axiom,
                    instance_seed: seed,
                    magnitude: defect,
                });
            }
        };

        let zero = estimator.evaluate(&vec![0.0; n], sample)?;
        report(Axiom::Normalization, zero.abs(), 1.0);

        let r1 = estimator.evaluate(&w1, sample)?;
        let aw: Vec<f64> = w1.iter().map(|x| a * x).collect();
        let ra = estimator.evaluate(&aw, sample)?;
        report(Axiom::PositiveHomogeneity, (ra - a * r1).abs(), (a * r1).abs());

        let shifted = sample.map(|x| x + c);
        let rs = estimator.evaluate(&w1, &shifted)?;
        let cash: f64 = c * w1.iter().sum::<f64>();
        report(Axiom::Translation, (rs - (r1 - cash)).abs(), r1.abs().max(cash.abs()));

        let r2 = estimator.evaluate(&w2, sample)?;
        let sum: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| x + y).collect();
        let r12 = estimator.evaluate(&sum, sample)?;
        report(Axiom::Subadditivity, (r12 - r1 - r2).max(0.0), r1.abs() + r2.abs());

        let wp: Vec<f64> = w1.iter().map(|x| x.abs()).collect();
        let bumps: Vec<f64> = (0..sample.as_slice().len()).map(|_| normal(&mut r).abs()).collect();
        let better = ReturnSample::from_observations(
            n,
            sample.n_obs(),
            sample.as_slice().iter().zip(&bumps).map(|(x, d)| x + d).collect(),
            sample.convention(),
        )?;
        let rp = estimator.evaluate(&wp, sample)?;
        let rb = estimator.evaluate(&wp, &better)?;
        report(Axiom::Monotonicity, (rb - rp).max(0.0), rp.abs());
    }
    Ok(CoherenceReport {
        estimator: estimator.name(),
        n_instances: samples.len(),
        tolerance,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::returns::{sample_returns, VarianceConvention};
    use crate::risk::{EmpiricalVariance, RiskMeasure};

    fn batch(n: usize, t: usize, count: u64) -> Vec<ReturnSample> {
        (0..count)
            .map(|i| sample_returns(n, t, rng::substream_seed(99, i), VarianceConvention::UnitVariance).unwrap())
            .collect()
    }

    #[test]
    fn maximal_loss_is_coherent() {
        let rep = coherence_check(&RiskMeasure::MaximalLoss, &batch(4, 30, 500), 1e-9).unwrap();
        assert!(rep.is_clean(), "{:?}", rep.violations.first());
    }

    #[test]
    fn expected_shortfall_is_coherent() {
        let rep = coherence_check(&RiskMeasure::es(0.9).unwrap(), &batch(5, 100, 500), 1e-9).unwrap();
        assert!(rep.is_clean(), "{:?}", rep.violations.first());
    }

    #[test]
    fn variance_control_fails_homogeneity() {
        let rep = coherence_check(&EmpiricalVariance, &batch(4, 30, 50), 1e-9).unwrap();
        assert!(rep.count(Axiom::PositiveHomogeneity) > 0);
        let json = rep.to_json().unwrap();
        assert!(json.contains("positive_homogeneity"));
        assert!(json.contains("instance_seed"));
    }
}
