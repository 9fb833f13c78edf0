//! Python bindings: `import rpo_py`.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rpo::budget::BudgetSpec;
use rpo::optimizer::{self, PortfolioProblem, PortfolioSolution, SolveStatus, SolverOptions};
use rpo::regularizer::RegularizerSpec;
use rpo::replica::{self, Control, SaddleContext};
use rpo::returns::{ReturnSample, VarianceConvention};
use rpo::risk::RiskMeasure;

fn to_py(e: rpo::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn parse<T: std::str::FromStr<Err = rpo::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

/// An `N x T` return sample.
#[pyclass(name = "Sample", frozen)]
struct PySample(ReturnSample);

#[pymethods]
impl PySample {
    /// From one list of returns per asset.
    #[new]
    #[pyo3(signature = (rows, convention = "unit_variance"))]
    fn new(rows: Vec<Vec<f64>>, convention: &str) -> PyResult<Self> {
        Ok(Self(ReturnSample::from_asset_rows(&rows, parse(convention)?).map_err(to_py)?))
    }

    /// I.i.d. normal returns with variance 1 (`unit_variance`) or `1/N` (`one_over_n`).
    #[staticmethod]
    #[pyo3(signature = (n_assets, n_obs, seed, convention = "one_over_n"))]
    fn random(n_assets: usize, n_obs: usize, seed: u64, convention: &str) -> PyResult<Self> {
        let c: VarianceConvention = parse(convention)?;
        Ok(Self(rpo::returns::sample_returns(n_assets, n_obs, seed, c).map_err(to_py)?))
    }

    #[getter]
    fn n_assets(&self) -> usize {
        self.0.n_assets()
    }

    #[getter]
    fn n_obs(&self) -> usize {
        self.0.n_obs()
    }

    #[getter]
    fn convention(&self) -> &'static str {
        self.0.convention().name()
    }

    /// Returns of each asset, one list per asset.
    fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.0.n_assets())
            .map(|i| (0..self.0.n_obs()).map(|t| self.0.get(i, t)).collect())
            .collect()
    }
}

#[pyclass(name = "Solution", frozen)]
struct PySolution(PortfolioSolution);

#[pymethods]
impl PySolution {
    #[getter]
    fn status(&self) -> String {
        match self.0.status {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::MaxIterations => "max_iterations",
        }
        .to_string()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.0.weights.clone()
    }

    #[getter]
    fn objective(&self) -> f64 {
        self.0.objective
    }

    #[getter]
    fn q0_empirical(&self) -> f64 {
        self.0.q0_empirical
    }

    #[getter]
    fn runaway(&self) -> bool {
        self.0.runaway
    }

    /// Dominance level of the certificate attached to an unbounded solution.
    #[getter]
    fn mu_star(&self) -> Option<f64> {
        self.0.dominance_certificate.as_ref().map(|c| c.mu_star)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Solution(status={}, objective={}, q0={})", self.status(), self.0.objective, self.0.q0_empirical)
    }
}

/// Solves the regularized Expected Shortfall (or Maximal Loss) program.
#[pyfunction]
#[pyo3(signature = (sample, beta = 0.7, reg = "none", maximal_loss = false, no_short = false))]
fn solve(py: Python<'_>, sample: &PySample, beta: f64, reg: &str, maximal_loss: bool, no_short: bool) -> PyResult<PySolution> {
    let reg: RegularizerSpec = parse(reg)?;
    let measure = if maximal_loss {
        RiskMeasure::MaximalLoss
    } else {
        RiskMeasure::es(beta).map_err(to_py)?
    };
    let s = sample.0.clone();
    let budget = BudgetSpec::for_convention(s.convention());
    let problem = PortfolioProblem::new(s, measure, reg, budget)
        .map_err(to_py)?
        .with_short_ban(no_short);
    let sol = py
        .detach(|| optimizer::solve(&problem, &SolverOptions::default()))
        .map_err(to_py)?;
    Ok(PySolution(sol))
}

/// `(mu_star, direction)` of the most dominant zero-sum portfolio.
#[pyfunction]
fn max_dominance(sample: &PySample) -> (f64, Vec<f64>) {
    let c = rpo::dominance::max_dominance(&sample.0);
    (c.mu_star, c.direction)
}

#[pyfunction]
fn toy_probability(eta: f64) -> f64 {
    rpo::dominance::toy_probability(eta)
}

/// `(p_hat, std_error)` of the instability frequency on unit-variance samples.
#[pyfunction]
fn instability_frequency(py: Python<'_>, n_assets: usize, n_obs: usize, eta: f64, n_samples: usize, seed: u64) -> PyResult<(f64, f64)> {
    let e = py
        .detach(|| rpo::dominance::instability_frequency(n_assets, n_obs, eta, n_samples, seed))
        .map_err(to_py)?;
    Ok((e.p_hat, e.std_error))
}

/// Saddle-point order parameters at `(tau, beta, reg)`.
#[pyfunction]
#[pyo3(signature = (tau, beta = 0.7, reg = "none", wealth = 1.0))]
fn solve_saddle<'py>(py: Python<'py>, tau: f64, beta: f64, reg: &str, wealth: f64) -> PyResult<Bound<'py, PyDict>> {
    let ctx = SaddleContext::new(tau, beta, parse(reg)?).map_err(to_py)?.with_wealth(wealth);
    ctx.validate().map_err(to_py)?;
    let sol = py.detach(|| replica::solve_saddle(&ctx, None)).map_err(to_py)?;
    let d = PyDict::new(py);
    let p = sol.params;
    d.set_item("lambda", p.lambda)?;
    d.set_item("epsilon", p.epsilon)?;
    d.set_item("q0", p.q0)?;
    d.set_item("delta", p.delta)?;
    d.set_item("q0_hat", p.q0_hat())?;
    d.set_item("delta_hat", p.delta_hat)?;
    d.set_item("converged", sol.converged)?;
    d.set_item("diverged", sol.diverged)?;
    d.set_item("max_residual", sol.max_residual())?;
    d.set_item("reason", sol.reason)?;
    Ok(d)
}

/// Warm-started scan; returns `(rows, critical)` with `critical` a dict or `None`.
#[pyfunction]
#[pyo3(signature = (control, grid, reg = "none", beta = 0.7, tau = 2.0))]
fn phase_scan<'py>(
    py: Python<'py>,
    control: &str,
    grid: Vec<f64>,
    reg: &str,
    beta: f64,
    tau: f64,
) -> PyResult<(Vec<Bound<'py, PyDict>>, Option<Bound<'py, PyDict>>)> {
    let control: Control = parse(control)?;
    let tpl = SaddleContext::new(tau, beta, parse(reg)?).map_err(to_py)?;
    let scan = py.detach(|| replica::phase_scan(&tpl, control, &grid)).map_err(to_py)?;
    let rows = scan
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("control", r.control)?;
            d.set_item("q0", r.q0)?;
            d.set_item("delta_hat", r.delta_hat)?;
            d.set_item("lambda", r.lambda)?;
            d.set_item("epsilon", r.epsilon)?;
            d.set_item("status", &r.status)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let critical = scan
        .critical
        .map(|c| -> PyResult<_> {
            let d = PyDict::new(py);
            d.set_item("converged", c.converged)?;
            d.set_item("diverged", c.diverged)?;
            d.set_item("estimate", c.estimate)?;
            d.set_item("q0_at_converged", c.q0_at_converged)?;
            Ok(d)
        })
        .transpose()?;
    Ok((rows, critical))
}

/// Monte Carlo estimate of the empirical `q0` and the unbounded fraction.
#[pyfunction]
fn mc_estimate<'py>(
    py: Python<'py>,
    n_assets: usize,
    tau: f64,
    beta: f64,
    reg: &str,
    n_samples: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let reg: RegularizerSpec = parse(reg)?;
    let r = py
        .detach(|| rpo::lab::mc_estimate(n_assets, tau, beta, reg, n_samples, seed))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("control_value", r.control_value)?;
    d.set_item("q0_mean", r.q0_mean)?;
    d.set_item("q0_stderr", r.q0_stderr)?;
    d.set_item("frac_unbounded", r.frac_unbounded)?;
    d.set_item("n_effective", r.n_effective)?;
    d.set_item("n_unbounded", r.n_unbounded)?;
    d.set_item("n_excluded", r.n_excluded)?;
    d.set_item("n_samples", r.n_samples)?;
    Ok(d)
}

#[pymodule]
fn rpo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySample>()?;
    m.add_class::<PySolution>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(max_dominance, m)?)?;
    m.add_function(wrap_pyfunction!(toy_probability, m)?)?;
    m.add_function(wrap_pyfunction!(instability_frequency, m)?)?;
    m.add_function(wrap_pyfunction!(solve_saddle, m)?)?;
    m.add_function(wrap_pyfunction!(phase_scan, m)?)?;
    m.add_function(wrap_pyfunction!(mc_estimate, m)?)?;
    Ok(())
}
