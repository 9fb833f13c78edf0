use super::{PortfolioProblem, PortfolioSolution, SolveStatus, SolverOptions, Duals, BOUNDARY_TOL};
use crate::dominance::{self, DominanceCertificate};
use crate::error::Result;
use crate::lp::{LinearProgram, LpStatus, Relation, SimplexOptions};

/// Certificate of unboundedness when the risk-dominance level of the sample
/// exceeds the linear penalty amplitude.
pub(super) fn unbounded_certificate(problem: &PortfolioProblem) -> Option<DominanceCertificate> {
    let eta = problem.reg.linear_amplitude()?;
    let k = problem.tail_size();
    let (level, x) = dominance::risk_dominance_lp(&problem.sample, k);
    if level > eta + BOUNDARY_TOL {
        let cert = dominance::finish(&problem.sample, &x, level, k);
        if cert.mu_star > eta {
            return Some(cert);
        }
    }
    None
}

pub(super) fn solve(problem: &PortfolioProblem, opts: &SolverOptions) -> Result<PortfolioSolution> {
    if !problem.short_ban && opts.certify_max_level {
        if let Some(cert) = unbounded_certificate(problem) {
            return Ok(PortfolioSolution::unbounded(problem, cert));
        }
    }
    let eta = problem.reg.linear_amplitude().unwrap_or(0.0);
    let costs = vec![eta; problem.n_assets()];
    let out = solve_weighted(problem, &costs, opts)?;
    Ok(match out {
        WeightedOutcome::Solved(s) => s,
        WeightedOutcome::Ray(u, iterations) => {
            let k = problem.tail_size();
            let cert = DominanceCertificate::from_direction(&problem.sample, &u, k)
                .unwrap_or_else(|_| dominance::risk_dominance(&problem.sample, k));
            let mut s = PortfolioSolution::unbounded(problem, cert);
            s.iterations = iterations;
            s
        }
    })
}

pub(super) enum WeightedOutcome {
    Solved(PortfolioSolution),
    /// The LP is unbounded along this weight direction.
    Ray(Vec<f64>, usize),
}

/// Solves the program with the per-asset linear penalty `sum_i costs_i |w_i|`
/// (the risk part and constraints of `problem`; its regularizer is ignored).
pub(super) fn solve_weighted(problem: &PortfolioProblem, costs: &[f64], opts: &SolverOptions) -> Result<WeightedOutcome> {
    let (n, t) = problem.sample.dims();
    let k = problem.tail_size();
    let ban = problem.short_ban;
    // variables: w+ (n), w- (n unless banned), eps+, eps-, u (t)
    let nw = if ban { n } else { 2 * n };
    let ie = nw;
    let iu = nw + 2;
    let mut c: Vec<f64> = costs.to_vec();
    if !ban {
        c.extend_from_slice(costs);
    }
    c.push(k);
    c.push(-k);
    c.extend(std::iter::repeat_n(1.0, t));
    let mut lp = LinearProgram::new(c);
    for (s, x) in problem.sample.observations().enumerate() {
        let mut row = Vec::with_capacity(nw + 3);
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                row.push((i, xi));
                if !ban {
                    row.push((n + i, -xi));
                }
            }
        }
        row.push((ie, 1.0));
        row.push((ie + 1, -1.0));
        row.push((iu + s, 1.0));
        lp.add_row(row, Relation::Ge, 0.0);
    }
    let mut budget: Vec<(usize, f64)> = (0..n).map(|i| (i, 1.0)).collect();
    if !ban {
        budget.extend((0..n).map(|i| (n + i, -1.0)));
    }
    lp.add_row(budget, Relation::Eq, problem.budget_target());

    let sol = lp.solve_with(&SimplexOptions {
        max_iterations: opts.lp_max_iter,
        ..Default::default()
    });
    let weights_of = |x: &[f64]| -> Vec<f64> { (0..n).map(|i| if ban { x[i] } else { x[i] - x[n + i] }).collect() };
    Ok(match sol.status {
        LpStatus::Optimal => {
            let mut out = PortfolioSolution::from_weights(problem, SolveStatus::Optimal, weights_of(&sol.x), sol.iterations)?;
            out.duals = Some(Duals {
                pi: sol.duals[..t].to_vec(),
                lambda: sol.duals[t],
            });
            WeightedOutcome::Solved(out)
        }
        LpStatus::Unbounded => {
            let ray = sol.ray.expect("unbounded LP carries a ray");
            WeightedOutcome::Ray(weights_of(&ray), sol.iterations)
        }
        LpStatus::IterationLimit | LpStatus::Infeasible => WeightedOutcome::Solved(PortfolioSolution::from_weights(
            problem,
            SolveStatus::MaxIterations,
            weights_of(&sol.x),
            sol.iterations,
        )?),
    })
}
