//! Gaussian return ensembles and their flat-file representation.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Scale of the i.i.d. Gaussian returns.
///
/// `OneOverN` is the large-portfolio measure (variance `1/N`) that pairs with
/// the budget `sum(w) = W N`; `UnitVariance` is the small-toy convention that
/// pairs with `sum(w) = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceConvention {
    UnitVariance,
    OneOverN,
}

impl VarianceConvention {
    pub fn variance(self, n_assets: usize) -> f64 {
        match self {
            VarianceConvention::UnitVariance => 1.0,
            VarianceConvention::OneOverN => 1.0 / n_assets as f64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            VarianceConvention::UnitVariance => "unit_variance",
            VarianceConvention::OneOverN => "one_over_n",
        }
    }
}

impl fmt::Display for VarianceConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for VarianceConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit_variance" | "unit-variance" | "unit" => Ok(VarianceConvention::UnitVariance),
            "one_over_n" | "one-over-n" | "1/n" => Ok(VarianceConvention::OneOverN),
            other => Err(Error::invalid(format!("unknown variance convention '{other}'"))),
        }
    }
}

/// An `N x T` matrix of asset returns.
///
/// Stored observation-major: the `N` returns of observation `t` are contiguous,
/// which is the access pattern of every loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSample {
    n_assets: usize,
    n_obs: usize,
    data: Vec<f64>,
    seed: u64,
    convention: VarianceConvention,
}

/// JSON sidecar stored next to a sample CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMetadata {
    pub n_assets: usize,
    pub n_obs: usize,
    pub seed: u64,
    pub variance_convention: VarianceConvention,
}

impl ReturnSample {
    /// Builds a sample from observation-major data (`data[t * n_assets + i]`).
    pub fn from_observations(
        n_assets: usize,
        n_obs: usize,
        data: Vec<f64>,
        convention: VarianceConvention,
    ) -> Result<Self> {
        if n_assets == 0 || n_obs == 0 {
            return Err(Error::invalid("a return sample needs at least one asset and one observation"));
        }
        if data.len() != n_assets * n_obs {
            return Err(Error::DimensionMismatch {
                expected: n_assets * n_obs,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite return for asset {} at observation {}",
                pos % n_assets,
                pos / n_assets
            )));
        }
        Ok(Self {
            n_assets,
            n_obs,
            data,
            seed: 0,
            convention,
        })
    }

    /// Builds a sample from one row per asset: `rows[i][t] = x_{i,t}`.
    pub fn from_asset_rows(rows: &[Vec<f64>], convention: VarianceConvention) -> Result<Self> {
        let n_assets = rows.len();
        let n_obs = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != n_obs) {
            return Err(Error::DimensionMismatch {
                expected: n_obs,
                found: bad.len(),
            });
        }
        let mut data = Vec::with_capacity(n_assets * n_obs);
        for t in 0..n_obs {
            data.extend(rows.iter().map(|r| r[t]));
        }
        Self::from_observations(n_assets, n_obs, data, convention)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn convention(&self) -> VarianceConvention {
        self.convention
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_assets, self.n_obs)
    }

    /// Return of asset `asset` at observation `t`.
    pub fn get(&self, asset: usize, t: usize) -> f64 {
        self.data[t * self.n_assets + asset]
    }

    /// The `N` returns of observation `t`.
    pub fn observation(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_assets..(t + 1) * self.n_assets]
    }

    pub fn observations(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_assets)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Portfolio return `w . x_t` for every observation.
    pub fn portfolio_returns(&self, weights: &[f64]) -> Result<Vec<f64>> {
        self.check_weights(weights)?;
        Ok(self.observations().map(|x| dot(x, weights)).collect())
    }

    pub(crate) fn check_weights(&self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.n_assets {
            return Err(Error::DimensionMismatch {
                expected: self.n_assets,
                found: weights.len(),
            });
        }
        Ok(())
    }

    /// Copy with every return mapped through `f`; metadata is preserved.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&x| f(x)).collect(),
            ..self.clone()
        }
    }

    /// First `n_obs` observations.
    pub fn truncated(&self, n_obs: usize) -> Result<Self> {
        if n_obs == 0 || n_obs > self.n_obs {
            return Err(Error::invalid(format!("cannot truncate {} observations to {n_obs}", self.n_obs)));
        }
        Ok(Self {
            n_obs,
            data: self.data[..n_obs * self.n_assets].to_vec(),
            ..self.clone()
        })
    }

    pub fn metadata(&self) -> SampleMetadata {
        SampleMetadata {
            n_assets: self.n_assets,
            n_obs: self.n_obs,
            seed: self.seed,
            variance_convention: self.convention,
        }
    }

    /// Writes the CSV form: header `asset_0..asset_{N-1}`, one row per observation,
    /// shortest round-trip decimal formatting.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record((0..self.n_assets).map(|i| format!("asset_{i}")))?;
        for x in self.observations() {
            writer.write_record(x.iter().map(|v| format!("{v}")))?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Parses the CSV form. Errors carry the 1-based line number of the offending record.
    pub fn read_csv<R: Read>(input: R, convention: VarianceConvention) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let headers = reader.headers().map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        let n_assets = headers.len();
        for (i, h) in headers.iter().enumerate() {
            if h.trim() != format!("asset_{i}") {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header 'asset_{i}', found '{h}'"),
                });
            }
        }
        let mut data = Vec::new();
        let mut n_obs = 0;
        for record in reader.records() {
            let record = record.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != n_assets {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {n_assets} fields, found {}", record.len()),
                });
            }
            for (i, field) in record.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("asset_{i}: '{field}' is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        message: format!("asset_{i}: non-finite value '{field}'"),
                    });
                }
                data.push(v);
            }
            n_obs += 1;
        }
        if n_obs == 0 {
            return Err(Error::Parse {
                line: 2,
                message: "no observations".into(),
            });
        }
        Self::from_observations(n_assets, n_obs, data, convention)
    }

    /// Writes `path` (CSV) and its JSON sidecar (see [`sidecar_path`]).
    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(File::create(path)?)?;
        let meta = File::create(sidecar_path(path))?;
        serde_json::to_writer_pretty(meta, &self.metadata())?;
        Ok(())
    }

    /// Reads `path` and, if present, its sidecar. Without a sidecar the sample is
    /// tagged with `fallback` and seed 0.
    pub fn load(path: &Path, fallback: VarianceConvention) -> Result<Self> {
        let side = sidecar_path(path);
        let meta: Option<SampleMetadata> = if side.exists() {
            Some(serde_json::from_reader(File::open(&side)?)?)
        } else {
            None
        };
        let convention = meta.map_or(fallback, |m| m.variance_convention);
        let sample = Self::read_csv(File::open(path)?, convention)?;
        match meta {
            Some(m) if m.n_assets != sample.n_assets || m.n_obs != sample.n_obs => Err(Error::invalid(format!(
                "sidecar declares {}x{} but the CSV holds {}x{}",
                m.n_assets, m.n_obs, sample.n_assets, sample.n_obs
            ))),
            Some(m) => Ok(sample.with_seed(m.seed)),
            None => Ok(sample),
        }
    }
}

/// `sample.csv` -> `sample.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Draws an `N x T` sample of i.i.d. normal returns with mean 0 and the variance
/// of `convention`. Deterministic in `seed`.
pub fn sample_returns(
    n_assets: usize,
    n_obs: usize,
    seed: u64,
    convention: VarianceConvention,
) -> Result<ReturnSample> {
    if n_assets == 0 || n_obs == 0 {
        return Err(Error::invalid("n_assets and n_obs must be positive"));
    }
    let sigma = convention.variance(n_assets).sqrt();
    let mut rng = rng::stream(seed);
    let data: Vec<f64> = (0..n_assets * n_obs)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        })
        .collect();
    Ok(ReturnSample::from_observations(n_assets, n_obs, data, convention)?.with_seed(seed))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
