//! Regularizers and the market-impact correspondence.
//!
//! An impact function `psi_i(w) = |w_i|^gamma` charged at liquidation adds
//! `eta * sum_i |w_i| psi_i(w) = eta * sum_i |w_i|^(gamma + 1)` to any
//! translation-invariant risk measure, i.e. an `L_p` penalty with
//! `p = gamma + 1`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegularizerSpec {
    /// `eta * sum |w_i|^p`
    PureLp { p: f64, eta: f64 },
    /// `eta1 * sum |w_i| + eta2 * sum |w_i|^2`
    ElasticNet { eta1: f64, eta2: f64 },
}

impl RegularizerSpec {
    pub fn pure_lp(p: f64, eta: f64) -> Result<Self> {
        if !(p.is_finite() && p > 0.0) {
            return Err(Error::invalid(format!("exponent p must be positive, got {p}")));
        }
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(Error::invalid(format!("amplitude eta must be non-negative, got {eta}")));
        }
        Ok(RegularizerSpec::PureLp { p, eta })
    }

    pub fn elastic_net(eta1: f64, eta2: f64) -> Result<Self> {
        if !(eta1.is_finite() && eta1 >= 0.0 && eta2.is_finite() && eta2 >= 0.0) {
            return Err(Error::invalid(format!(
                "elastic-net amplitudes must be non-negative, got ({eta1}, {eta2})"
            )));
        }
        Ok(RegularizerSpec::ElasticNet { eta1, eta2 })
    }

    pub fn l1(eta: f64) -> Result<Self> {
        Self::pure_lp(1.0, eta)
    }

    pub fn none() -> Self {
        RegularizerSpec::ElasticNet { eta1: 0.0, eta2: 0.0 }
    }

    /// Collapses the two spellings of the L1 penalty onto the elastic-net form.
    pub fn canonical(self) -> Self {
        match self {
            RegularizerSpec::PureLp { p, eta } if p == 1.0 => RegularizerSpec::ElasticNet { eta1: eta, eta2: 0.0 },
            RegularizerSpec::PureLp { eta, .. } if eta == 0.0 => Self::none(),
            other => other,
        }
    }

    pub fn equivalent(&self, other: &Self) -> bool {
        self.canonical() == other.canonical()
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            RegularizerSpec::PureLp { p, eta } => Self::pure_lp(p, eta).map(|_| ()),
            RegularizerSpec::ElasticNet { eta1, eta2 } => Self::elastic_net(eta1, eta2).map(|_| ()),
        }
    }

    /// Penalty of a single weight.
    pub fn unit_penalty(&self, w: f64) -> f64 {
        self.nonnegative_parts().value(w.abs())
    }

    /// Derivative of the per-asset penalty at `w != 0` (0 is returned at `w = 0`).
    pub fn unit_derivative(&self, w: f64) -> f64 {
        if w == 0.0 {
            0.0
        } else {
            w.signum() * self.nonnegative_parts().first(w.abs())
        }
    }

    /// Subdifferential of the per-asset penalty at `w = 0` as `[-r, r]`
    /// (`r` infinite for `p < 1`).
    pub fn zero_subgradient_radius(&self) -> f64 {
        match self.canonical() {
            RegularizerSpec::ElasticNet { eta1, .. } => eta1,
            RegularizerSpec::PureLp { p, eta } if p < 1.0 && eta > 0.0 => f64::INFINITY,
            RegularizerSpec::PureLp { .. } => 0.0,
        }
    }

    pub fn penalty(&self, weights: &[f64]) -> f64 {
        weights.iter().map(|&w| self.unit_penalty(w)).sum()
    }

    /// Linear (L1) amplitude after canonicalization, if the penalty grows at most
    /// linearly; `None` for penalties that grow faster or slower than linearly.
    pub fn linear_amplitude(&self) -> Option<f64> {
        match self.canonical() {
            RegularizerSpec::ElasticNet { eta1, eta2 } if eta2 == 0.0 => Some(eta1),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.canonical(), RegularizerSpec::ElasticNet { eta1, eta2 } if eta1 == 0.0 && eta2 == 0.0)
    }

    /// `true` when the penalty grows strictly faster than linearly.
    pub fn is_superlinear(&self) -> bool {
        match self.canonical() {
            RegularizerSpec::PureLp { p, eta } => p > 1.0 && eta > 0.0,
            RegularizerSpec::ElasticNet { eta2, .. } => eta2 > 0.0,
        }
    }

    /// `true` for `p < 1` with a positive amplitude (nonconvex penalty).
    pub fn is_sublinear(&self) -> bool {
        matches!(self.canonical(), RegularizerSpec::PureLp { p, eta } if p < 1.0 && eta > 0.0)
    }

    /// Penalty restricted to `a >= 0` split into its L1, L2 and power parts:
    /// `l1 * a + l2 * a^2 + power_amp * a^power`.
    pub(crate) fn nonnegative_parts(&self) -> PenaltyParts {
        match self.canonical() {
            RegularizerSpec::ElasticNet { eta1, eta2 } => PenaltyParts {
                l1: eta1,
                l2: eta2,
                power_amp: 0.0,
                power: 2.0,
            },
            RegularizerSpec::PureLp { p, eta } if p == 2.0 => PenaltyParts {
                l1: 0.0,
                l2: eta,
                power_amp: 0.0,
                power: 2.0,
            },
            RegularizerSpec::PureLp { p, eta } => PenaltyParts {
                l1: 0.0,
                l2: 0.0,
                power_amp: eta,
                power: p,
            },
        }
    }
}

/// Convex penalty on a non-negative variable; see [`RegularizerSpec::nonnegative_parts`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct PenaltyParts {
    pub l1: f64,
    pub l2: f64,
    pub power_amp: f64,
    pub power: f64,
}

impl PenaltyParts {
    pub fn value(&self, a: f64) -> f64 {
        let pw = if self.power_amp > 0.0 && a > 0.0 {
            self.power_amp * a.powf(self.power)
        } else {
            0.0
        };
        self.l1 * a + self.l2 * a * a + pw
    }

    pub fn first(&self, a: f64) -> f64 {
        let pw = if self.power_amp > 0.0 && a > 0.0 {
            self.power_amp * self.power * a.powf(self.power - 1.0)
        } else {
            0.0
        };
        self.l1 + 2.0 * self.l2 * a + pw
    }

    pub fn second(&self, a: f64) -> f64 {
        let pw = if self.power_amp > 0.0 && a > 0.0 {
            self.power_amp * self.power * (self.power - 1.0) * a.powf(self.power - 2.0)
        } else {
            0.0
        };
        2.0 * self.l2 + pw
    }
}

impl fmt::Display for RegularizerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            RegularizerSpec::PureLp { p, eta } => write!(f, "lp:{p}:{eta}"),
            RegularizerSpec::ElasticNet { eta1, eta2 } => write!(f, "en:{eta1}:{eta2}"),
        }
    }
}

/// Parses `none`, `l1:ETA`, `l2:ETA`, `lp:P:ETA` and `en:ETA1:ETA2`.
impl FromStr for RegularizerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .ok_or_else(|| Error::invalid(format!("regularizer '{s}' is missing a field")))?
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("regularizer '{s}': '{}' is not a number", parts[i])))
        };
        let expect = |n: usize| -> Result<()> {
            if parts.len() == n {
                Ok(())
            } else {
                Err(Error::invalid(format!("regularizer '{s}' expects {} fields", n - 1)))
            }
        };
        match parts[0].to_ascii_lowercase().as_str() {
            "none" => {
                expect(1)?;
                Ok(Self::none())
            }
            "l1" => {
                expect(2)?;
                Self::pure_lp(1.0, num(1)?)
            }
            "l2" => {
                expect(2)?;
                Self::pure_lp(2.0, num(1)?)
            }
            "lp" => {
                expect(3)?;
                Self::pure_lp(num(1)?, num(2)?)
            }
            "en" | "elastic" => {
                expect(3)?;
                Self::elastic_net(num(1)?, num(2)?)
            }
            other => Err(Error::invalid(format!("unknown regularizer kind '{other}'"))),
        }
    }
}

/// Regularizer induced by the impact function `psi(w) = |w|^gamma`.
pub fn impact_to_regularizer(impact_exponent: f64, amplitude: f64) -> Result<RegularizerSpec> {
    if !(impact_exponent.is_finite() && impact_exponent >= 0.0) {
        return Err(Error::invalid(format!(
            "impact exponent must be non-negative, got {impact_exponent}"
        )));
    }
    RegularizerSpec::pure_lp(impact_exponent + 1.0, amplitude)
}

/// Magnitude of the price impact `|w|^gamma` of liquidating position `w`
/// (`gamma = 0` is the bid-ask spread: unit impact for any nonzero trade).
pub fn impact(impact_exponent: f64, w: f64) -> f64 {
    if w == 0.0 {
        0.0
    } else {
        w.abs().powf(impact_exponent)
    }
}
