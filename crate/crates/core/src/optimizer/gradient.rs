use super::PortfolioProblem;
use crate::error::Result;

/// Gradient of `k rho(w) + penalty(w)` where it exists: the tail weights of
/// the sorted losses times `-x_t`, plus the penalty derivative.
///
/// At points with tied order statistics or zero weights this is one element
/// of the subdifferential.
pub fn objective_gradient(problem: &PortfolioProblem, weights: &[f64]) -> Result<Vec<f64>> {
    let k = problem.tail_size();
    let losses = problem.losses(weights)?;
    let tw = losses.tail_weights(k);
    let n = problem.n_assets();
    let mut g: Vec<f64> = weights.iter().map(|&w| problem.reg.unit_derivative(w)).collect();
    for (x, &c) in problem.sample.observations().zip(&tw) {
        if c != 0.0 {
            for i in 0..n {
                g[i] -= c * x[i];
            }
        }
    }
    Ok(g)
}

/// Central finite differences of the objective with step `h`.
pub fn finite_difference_gradient(problem: &PortfolioProblem, weights: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut w = weights.to_vec();
    let mut g = Vec::with_capacity(w.len());
    for i in 0..w.len() {
        let orig = w[i];
        w[i] = orig + h;
        let up = problem.objective(&w)?;
        w[i] = orig - h;
        let down = problem.objective(&w)?;
        w[i] = orig;
        g.push((up - down) / (2.0 * h));
    }
    Ok(g)
}
