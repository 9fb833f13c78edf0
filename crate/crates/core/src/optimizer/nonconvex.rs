//! `p < 1` penalties: reweighted-L1 majorize-minimize iterations.
//!
//! The concave penalty `eta |w|^p` is majorized at the current iterate by the
//! weighted L1 norm with weights `eta p (|w_i| + delta)^(p-1)`, so each round
//! is a linear program. Rounds whose LP is unbounded move along the
//! unbounded direction. A sublinear penalty cannot stop a positive
//! risk-dominance direction, so a final probe along that direction at the
//! runaway norm decides whether the guard trips.

use super::linear::{solve_weighted, WeightedOutcome};
use super::{PortfolioProblem, PortfolioSolution, SolveStatus, SolverOptions, BOUNDARY_TOL, RUNAWAY_NORM};
use crate::dominance;
use crate::error::Result;
use crate::regularizer::RegularizerSpec;

const MAX_ROUNDS: usize = 100;

pub(super) fn solve(problem: &PortfolioProblem, opts: &SolverOptions) -> Result<PortfolioSolution> {
    let RegularizerSpec::PureLp { p, eta } = problem.reg.canonical() else {
        unreachable!("sublinear penalties are pure L_p");
    };
    let n = problem.n_assets();
    let scale = (problem.budget_target() / n as f64).abs().max(1e-12);
    let delta = 1e-9 * scale;
    let mut w = problem.budget.uniform(n);
    let mut best_obj = problem.objective(&w)?;
    let mut best: Option<PortfolioSolution> = None;
    let mut rounds = 0;
    let mut runaway = false;

    while rounds < MAX_ROUNDS.min(opts.max_iter.max(1)) {
        rounds += 1;
        let costs: Vec<f64> = w.iter().map(|x| eta * p * (x.abs() + delta).powf(p - 1.0)).collect();
        match solve_weighted(problem, &costs, opts)? {
            WeightedOutcome::Solved(sol) => {
                let obj = problem.objective(&sol.weights)?;
                let moved = sol
                    .weights
                    .iter()
                    .zip(&w)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                w = sol.weights.clone();
                if obj < best_obj || best.is_none() {
                    best_obj = obj.min(best_obj);
                    best = Some(sol);
                }
                if moved <= 1e-12 * (1.0 + scale) {
                    break;
                }
            }
            WeightedOutcome::Ray(u, _) => {
                // double the step along the ray while the objective keeps falling
                let norm_u: f64 = u.iter().map(|v| v.abs()).sum();
                let mut a = scale / norm_u.max(1e-300);
                let mut cur = problem.objective(&w)?;
                loop {
                    let trial: Vec<f64> = w.iter().zip(&u).map(|(x, d)| x + a * d).collect();
                    let val = problem.objective(&trial)?;
                    if val >= cur {
                        break;
                    }
                    cur = val;
                    w = trial;
                    if w.iter().map(|v| v.abs()).sum::<f64>() > RUNAWAY_NORM {
                        runaway = true;
                        break;
                    }
                    a *= 2.0;
                }
                if runaway {
                    break;
                }
            }
        }
    }

    let k = problem.tail_size();
    let mut cert = None;
    if !problem.short_ban {
        let (level, x) = dominance::risk_dominance_lp(&problem.sample, k);
        if level > BOUNDARY_TOL {
            let c = dominance::finish(&problem.sample, &x, level, k);
            if !runaway {
                let base = best.as_ref().map_or(w.clone(), |b| b.weights.clone());
                let base_norm: f64 = base.iter().map(|v| v.abs()).sum();
                let a = 2.0 * (RUNAWAY_NORM + base_norm);
                let probe: Vec<f64> = base.iter().zip(&c.direction).map(|(x, d)| x + a * d).collect();
                if problem.objective(&probe)? < best_obj {
                    runaway = true;
                }
            }
            cert = Some(c);
        }
    }

    let mut out = match best {
        Some(b) => b,
        None => PortfolioSolution::from_weights(problem, SolveStatus::MaxIterations, problem.budget.uniform(n), 0)?,
    };
    out.iterations = rounds;
    out.dominance_certificate = cert;
    if runaway {
        out.status = SolveStatus::MaxIterations;
        out.runaway = true;
    }
    Ok(out)
}
