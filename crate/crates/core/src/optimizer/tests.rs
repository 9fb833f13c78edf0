use super::*;
use crate::dominance::{max_dominance, verify_unbounded_ray};
use crate::returns::{sample_returns, VarianceConvention};
use crate::rng;

fn toy(x1: [f64; 2], x2: [f64; 2]) -> ReturnSample {
    ReturnSample::from_asset_rows(&[x1.to_vec(), x2.to_vec()], VarianceConvention::UnitVariance).unwrap()
}

fn problem(sample: ReturnSample, measure: RiskMeasure, reg: RegularizerSpec) -> PortfolioProblem {
    let budget = BudgetSpec::for_convention(sample.convention());
    PortfolioProblem::new(sample, measure, reg, budget).unwrap()
}

fn opts() -> SolverOptions {
    SolverOptions::default()
}

#[test]
fn identical_columns_give_equal_weights() {
    let base = sample_returns(1, 40, 3, VarianceConvention::OneOverN).unwrap();
    let row: Vec<f64> = (0..40).map(|t| base.get(0, t)).collect();
    let rows = vec![row; 5];
    let s = ReturnSample::from_asset_rows(&rows, VarianceConvention::OneOverN).unwrap();
    let pr = problem(s, RiskMeasure::es(0.7).unwrap(), RegularizerSpec::pure_lp(2.0, 0.3).unwrap());
    let sol = solve(&pr, &opts()).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    for w in &sol.weights {
        assert!((w - 1.0).abs() < 1e-7, "{:?}", sol.weights);
    }
    let banned = solve_no_short(&pr, &opts()).unwrap();
    for w in &banned.weights {
        assert!((w - 1.0).abs() < 1e-7);
    }
}

#[test]
fn toy_l1_above_threshold_picks_dominating_asset() {
    let s = toy([1.0, 0.5], [0.0, 0.0]);
    assert!((max_dominance(&s).mu_star - 0.25).abs() < 1e-12);
    let pr = problem(s, RiskMeasure::MaximalLoss, RegularizerSpec::l1(0.3).unwrap());
    let sol = solve(&pr, &opts()).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.weights[0] - 1.0).abs() < 1e-10 && sol.weights[1].abs() < 1e-10);
}

#[test]
fn toy_steep_slopes_are_unbounded_with_certificate() {
    let eta = 0.2;
    // x2 - x1 = 0.6 and 0.5, both above 2 eta
    let s = toy([0.1, -0.3], [0.7, 0.2]);
    let pr = problem(s.clone(), RiskMeasure::MaximalLoss, RegularizerSpec::l1(eta).unwrap());
    let sol = solve(&pr, &opts()).unwrap();
    assert_eq!(sol.status, SolveStatus::Unbounded);
    let cert = sol.dominance_certificate.unwrap();
    assert!(cert.mu_star > eta);
    assert!(verify_unbounded_ray(&s, &pr.reg, &[0.5, 0.5], &cert, &[1.0, 10.0, 100.0]).unwrap());
}

/// Minimum of the objective over a grid of the budget hyperplane.
fn grid_oracle(pr: &PortfolioProblem, half_width: f64, steps: usize) -> (f64, Vec<f64>) {
    let n = pr.n_assets();
    let target = pr.budget_target();
    let mut best = (f64::INFINITY, vec![0.0; n]);
    let mut center = vec![0.0; n - 1];
    let mut half = half_width;
    // coarse grid, then repeated zooms around the incumbent
    for round in 0..12 {
        let m = if round == 0 { steps } else { 40 };
        let h = 2.0 * half / m as f64;
        let mut eval = |free: &[f64]| {
            let mut w = free.to_vec();
            w.push(target - free.iter().sum::<f64>());
            let v = pr.objective(&w).unwrap();
            if v < best.0 {
                best = (v, w);
            }
        };
        if n == 2 {
            for i in 0..=m {
                eval(&[center[0] - half + i as f64 * h]);
            }
        } else {
            for i in 0..=m {
                for j in 0..=m {
                    eval(&[center[0] - half + i as f64 * h, center[1] - half + j as f64 * h]);
                }
            }
        }
        center = best.1[..n - 1].to_vec();
        half = 4.0 * h;
    }
    best
}

#[test]
fn power_penalty_matches_grid_oracle() {
    for (n, seed) in [(2usize, 1u64), (2, 2), (3, 3), (3, 4)] {
        let s = sample_returns(n, 8, seed, VarianceConvention::UnitVariance).unwrap();
        let pr = problem(s, RiskMeasure::es(0.75).unwrap(), RegularizerSpec::pure_lp(1.5, 0.4).unwrap());
        let sol = solve(&pr, &opts()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let (best, w) = grid_oracle(&pr, 3.0, if n == 2 { 2000 } else { 200 });
        assert!(sol.objective <= best + 1e-9, "n={n}: {} vs grid {best}", sol.objective);
        assert!(best <= sol.objective + 1e-7, "n={n}: {} vs grid {best}", sol.objective);
        for (a, b) in sol.weights.iter().zip(&w) {
            assert!((a - b).abs() <= 1e-3, "n={n}: {:?} vs {:?}", sol.weights, w);
        }
    }
}

fn regs() -> Vec<RegularizerSpec> {
    vec![
        RegularizerSpec::l1(0.05).unwrap(),
        RegularizerSpec::elastic_net(0.02, 0.1).unwrap(),
        RegularizerSpec::elastic_net(0.0, 0.1).unwrap(),
        RegularizerSpec::pure_lp(1.5, 0.1).unwrap(),
        RegularizerSpec::pure_lp(2.0, 0.05).unwrap(),
        RegularizerSpec::pure_lp(3.0, 0.05).unwrap(),
    ]
}

#[test]
fn optimal_solutions_satisfy_kkt() {
    for (idx, reg) in regs().into_iter().enumerate() {
        for ban in [false, true] {
            let s = sample_returns(20, 60, rng::substream_seed(17, idx as u64), VarianceConvention::OneOverN).unwrap();
            let pr = problem(s, RiskMeasure::es(0.8).unwrap(), reg).with_short_ban(ban);
            let sol = solve(&pr, &opts()).unwrap();
            if sol.status == SolveStatus::Unbounded {
                continue;
            }
            assert_eq!(sol.status, SolveStatus::Optimal, "{reg} ban={ban}");
            let rep = check_kkt(&pr, &sol).unwrap();
            assert!(rep.passes(1e-6), "{reg} ban={ban}: {rep:?}");
            assert!((sol.weights.iter().sum::<f64>() - pr.budget_target()).abs() < 1e-8);
            assert!((sol.objective - pr.objective(&sol.weights).unwrap()).abs() < 1e-8);
        }
    }
}

#[test]
fn perturbed_weight_breaks_stationarity() {
    let s = sample_returns(10, 50, 8, VarianceConvention::OneOverN).unwrap();
    let pr = problem(s, RiskMeasure::es(0.7).unwrap(), RegularizerSpec::pure_lp(2.0, 0.2).unwrap());
    let sol = solve(&pr, &opts()).unwrap();
    let duals = sol.duals.clone().unwrap();
    let mut w = sol.weights.clone();
    w[3] += 1e-2;
    let rep = check_kkt_with(&pr, &w, &duals).unwrap();
    assert!(rep.stationarity > 1e-6);
}

#[test]
fn l1_zero_weights_carry_interior_subgradients() {
    let s = sample_returns(20, 40, 21, VarianceConvention::OneOverN).unwrap();
    let eta = 0.5;
    let pr = problem(s, RiskMeasure::es(0.7).unwrap(), RegularizerSpec::l1(eta).unwrap());
    let sol = solve(&pr, &opts()).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    let duals = sol.duals.as_ref().unwrap();
    let mut zeros = 0;
    for i in 0..pr.n_assets() {
        let c: f64 = pr.sample.observations().zip(&duals.pi).map(|(x, p)| p * x[i]).sum::<f64>() + duals.lambda;
        if sol.weights[i].abs() <= ZERO_WEIGHT {
            zeros += 1;
            assert!(c.abs() <= eta + 1e-9);
        } else {
            assert!((c - eta * sol.weights[i].signum()).abs() <= 1e-9);
        }
    }
    assert!(zeros > 0);
}

#[test]
fn simplex_and_interior_point_agree_for_l1() {
    let mut compared = 0;
    for seed in 0..20u64 {
        let s = sample_returns(8, 40, rng::substream_seed(5, seed), VarianceConvention::OneOverN).unwrap();
        let pr = problem(s, RiskMeasure::es(0.75).unwrap(), RegularizerSpec::l1(0.02).unwrap());
        let a = solve(&pr, &SolverOptions { method: Method::Simplex, ..opts() }).unwrap();
        let b = solve(&pr, &SolverOptions { method: Method::InteriorPoint, ..opts() }).unwrap();
        assert_eq!(a.status, b.status);
        if a.status == SolveStatus::Optimal {
            assert!((a.objective - b.objective).abs() < 1e-6, "seed {seed}: {} vs {}", a.objective, b.objective);
            compared += 1;
        }
    }
    assert!(compared > 5);
}

#[test]
fn hard_l1_matches_short_ban() {
    for seed in 0..10u64 {
        let s = sample_returns(5, 30, rng::substream_seed(9, seed), VarianceConvention::UnitVariance).unwrap();
        let pr = problem(s, RiskMeasure::es(0.8).unwrap(), RegularizerSpec::l1(1e3).unwrap());
        let l1 = solve(&pr, &opts()).unwrap();
        let free = problem(pr.sample.clone(), pr.measure, RegularizerSpec::none());
        let banned = solve_no_short(&free, &opts()).unwrap();
        assert_eq!(l1.status, SolveStatus::Optimal);
        for (a, b) in l1.weights.iter().zip(&banned.weights) {
            assert!((-a).max(0.0) <= 1e-6);
            assert!((a - b).abs() <= 1e-4, "seed {seed}: {:?} vs {:?}", l1.weights, banned.weights);
        }
    }
}

#[test]
fn short_ban_tames_dominance() {
    let s = toy([0.1, -0.3], [0.7, 0.2]);
    let pr = problem(s, RiskMeasure::MaximalLoss, RegularizerSpec::none());
    assert_eq!(solve(&pr, &opts()).unwrap().status, SolveStatus::Unbounded);
    let sol = solve_no_short(&pr, &opts()).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!(sol.weights.iter().all(|&w| w >= -1e-12));
    // asset 2 dominates: the whole budget goes there
    assert!((sol.weights[1] - 1.0).abs() < 1e-10);
    // the 1-D oracle over w in [0, 1]
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=10_000 {
        let w = i as f64 / 10_000.0;
        let v = pr.objective(&[w, 1.0 - w]).unwrap();
        if v < best.0 {
            best = (v, w);
        }
    }
    assert!((sol.weights[0] - best.1).abs() <= 1e-4);
}

#[test]
fn p_dichotomy_on_dominant_sample() {
    let s = toy([0.1, -0.3], [0.7, 0.2]);
    for p in [1.5, 2.0] {
        let pr = problem(s.clone(), RiskMeasure::MaximalLoss, RegularizerSpec::pure_lp(p, 0.1).unwrap());
        let sol = solve(&pr, &opts()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal, "p={p}");
    }
    let pr = problem(s, RiskMeasure::MaximalLoss, RegularizerSpec::pure_lp(0.5, 0.1).unwrap());
    let sol = solve(&pr, &opts()).unwrap();
    assert_eq!(sol.status, SolveStatus::MaxIterations);
    assert!(sol.runaway);
    assert!(sol.dominance_certificate.is_some());
}

#[test]
fn sublinear_penalty_without_dominance_converges() {
    let s = sample_returns(4, 60, 2, VarianceConvention::OneOverN).unwrap();
    let pr = problem(s, RiskMeasure::es(0.7).unwrap(), RegularizerSpec::pure_lp(0.5, 0.01).unwrap());
    let sol = solve(&pr, &opts()).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!(!sol.runaway);
    assert!(sol.objective <= pr.objective(&pr.budget.uniform(4)).unwrap() + 1e-12);
}

#[test]
fn gradient_matches_finite_differences() {
    let s = sample_returns(6, 40, 12, VarianceConvention::OneOverN).unwrap();
    for reg in regs() {
        let pr = problem(s.clone(), RiskMeasure::es(0.7).unwrap(), reg);
        let w: Vec<f64> = (0..6).map(|i| 1.0 + 0.3 * (i as f64 - 2.5)).collect();
        let g = objective_gradient(&pr, &w).unwrap();
        let fd = finite_difference_gradient(&pr, &w, 1e-6).unwrap();
        let scale = g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() / scale < 1e-5, "{reg}: {g:?} vs {fd:?}");
        }
    }
}

#[test]
fn elastic_net_path_shrinks_weight_dispersion() {
    let s = sample_returns(30, 45, 4, VarianceConvention::OneOverN).unwrap();
    let mut last = f64::INFINITY;
    for eta2 in [0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0] {
        let pr = problem(s.clone(), RiskMeasure::es(0.7).unwrap(), RegularizerSpec::elastic_net(0.0, eta2).unwrap());
        let sol = solve(&pr, &opts()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.q0_empirical <= last + 1e-8, "eta2={eta2}");
        last = sol.q0_empirical;
    }
}

#[test]
fn unboundedness_iff_dominance_small_sweep() {
    let mut unbounded = 0;
    for n in 2..=4 {
        for t in 2..=4 {
            for rep in 0..15u64 {
                let seed = rng::substream_seed(1000 * n as u64 + t as u64, rep);
                let s = sample_returns(n, t, seed, VarianceConvention::UnitVariance).unwrap();
                let eta = 0.2;
                let mu = max_dominance(&s).mu_star;
                if (mu - eta).abs() <= BOUNDARY_TOL {
                    continue;
                }
                let pr = problem(s, RiskMeasure::MaximalLoss, RegularizerSpec::l1(eta).unwrap());
                let sol = solve(&pr, &opts()).unwrap();
                assert_eq!(sol.status == SolveStatus::Unbounded, mu > eta, "n={n} t={t} rep={rep}");
                if mu > eta {
                    unbounded += 1;
                }
            }
        }
    }
    assert!(unbounded > 0);
}

#[test]
fn convention_mismatch_rejected() {
    let s = sample_returns(3, 10, 1, VarianceConvention::UnitVariance).unwrap();
    let err = PortfolioProblem::new(s, RiskMeasure::MaximalLoss, RegularizerSpec::none(), BudgetSpec::default());
    assert!(matches!(err, Err(Error::ConventionMismatch { .. })));
}

#[test]
fn solution_serializes() {
    let s = sample_returns(3, 10, 1, VarianceConvention::UnitVariance).unwrap();
    let pr = problem(s, RiskMeasure::es(0.7).unwrap(), RegularizerSpec::pure_lp(2.0, 0.1).unwrap());
    let json = solve(&pr, &opts()).unwrap().to_json().unwrap();
    assert!(json.contains("\"status\": \"optimal\""));
    assert!(json.contains("q0_empirical"));
}

#[test]
fn ray_certificates_agree_with_the_dominance_pre_check() {
    let fast = SolverOptions {
        certify_max_level: false,
        ..opts()
    };
    let mut unbounded = 0;
    for seed in 0..60 {
        let s = sample_returns(8, 12, seed, VarianceConvention::OneOverN).unwrap();
        for eta in [0.0, 0.02] {
            let pr = problem(s.clone(), RiskMeasure::es(0.7).unwrap(), RegularizerSpec::l1(eta).unwrap());
            let a = solve(&pr, &opts()).unwrap();
            let b = solve(&pr, &fast).unwrap();
            assert_eq!(a.status, b.status, "seed {seed} eta {eta}");
            if b.status == SolveStatus::Unbounded {
                unbounded += 1;
                let cb = b.dominance_certificate.unwrap();
                let ca = a.dominance_certificate.unwrap();
                assert!(cb.mu_star > eta);
                assert!(cb.mu_star <= ca.mu_star + 1e-9);
            } else {
                assert!((a.objective - b.objective).abs() < 1e-9 * (1.0 + a.objective.abs()));
            }
        }
    }
    assert!(unbounded > 0);
}
