use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::returns::VarianceConvention;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `sum(w) = W * N`
    SumToN,
    /// `sum(w) = 1`
    SumToOne,
}

impl Normalization {
    pub fn name(self) -> &'static str {
        match self {
            Normalization::SumToN => "sum_to_n",
            Normalization::SumToOne => "sum_to_one",
        }
    }

    /// The return scale this normalization is paired with.
    pub fn convention(self) -> VarianceConvention {
        match self {
            Normalization::SumToN => VarianceConvention::OneOverN,
            Normalization::SumToOne => VarianceConvention::UnitVariance,
        }
    }
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum_to_n" | "sum-to-n" | "n" => Ok(Normalization::SumToN),
            "sum_to_one" | "sum-to-one" | "one" | "1" => Ok(Normalization::SumToOne),
            other => Err(Error::invalid(format!("unknown budget normalization '{other}'"))),
        }
    }
}

/// Linear budget constraint on the weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    pub wealth_per_asset: f64,
    pub normalization: Normalization,
}

impl Default for BudgetSpec {
    fn default() -> Self {
        Self {
            wealth_per_asset: 1.0,
            normalization: Normalization::SumToN,
        }
    }
}

impl BudgetSpec {
    pub fn sum_to_n(wealth_per_asset: f64) -> Self {
        Self {
            wealth_per_asset,
            normalization: Normalization::SumToN,
        }
    }

    pub fn sum_to_one() -> Self {
        Self {
            wealth_per_asset: 1.0,
            normalization: Normalization::SumToOne,
        }
    }

    /// Default budget for samples drawn under `convention`.
    pub fn for_convention(convention: VarianceConvention) -> Self {
        match convention {
            VarianceConvention::OneOverN => Self::default(),
            VarianceConvention::UnitVariance => Self::sum_to_one(),
        }
    }

    /// Right-hand side of `sum(w) = target`.
    pub fn target(&self, n_assets: usize) -> f64 {
        match self.normalization {
            Normalization::SumToN => self.wealth_per_asset * n_assets as f64,
            Normalization::SumToOne => 1.0,
        }
    }

    /// The equal-weight portfolio meeting the budget.
    pub fn uniform(&self, n_assets: usize) -> Vec<f64> {
        vec![self.target(n_assets) / n_assets as f64; n_assets]
    }

    pub fn residual(&self, weights: &[f64]) -> f64 {
        weights.iter().sum::<f64>() - self.target(weights.len())
    }

    pub fn validate(&self, convention: VarianceConvention) -> Result<()> {
        if !(self.wealth_per_asset.is_finite() && self.wealth_per_asset > 0.0) {
            return Err(Error::invalid(format!(
                "wealth per asset must be positive, got {}",
                self.wealth_per_asset
            )));
        }
        if self.normalization.convention() != convention {
            return Err(Error::ConventionMismatch {
                convention: convention.name(),
                normalization: self.normalization.name(),
            });
        }
        Ok(())
    }
}
