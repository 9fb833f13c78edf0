//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use rpo::budget::BudgetSpec;
use rpo::dominance::{instability_sweep, max_dominance, toy_probability, verify_unbounded_ray};
use rpo::lab::{mc_estimate, mc_sweep, transition_locator, SweepConfig};
use rpo::optimizer::{finite_difference_gradient, objective_gradient, solve, solve_no_short, PortfolioProblem, SolveStatus, SolverOptions};
use rpo::quadrature::{gaussian_avg, gaussian_avg_split};
use rpo::regularizer::RegularizerSpec;
use rpo::replica::{free_energy, phase_scan, solve_saddle, Control, OrderParameters, SaddleContext, SaddleSolution};
use rpo::returns::{sample_returns, ReturnSample, VarianceConvention};
use rpo::risk::{coherence_check, expected_shortfall, maximal_loss, Axiom, EmpiricalVariance, EsConfig, RiskMeasure};
use rpo::rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn unit_problem(sample: ReturnSample, measure: RiskMeasure, reg: RegularizerSpec) -> PortfolioProblem {
    PortfolioProblem::new(sample, measure, reg, BudgetSpec::sum_to_one()).expect("valid problem")
}

fn c1_toy_probability() -> Outcome {
    let start = Instant::now();
    let etas = [0.0, 0.25, 0.5, 1.0];
    let n = 200_000;
    let est = instability_sweep(2, 2, &etas, n, 20_240_601).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for e in &est {
        let p = toy_probability(e.eta);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let z = (e.p_hat - p).abs() / se;
        worst = worst.max(z);
        parts.push(format!("eta={} p={:.5} closed={:.5}", e.eta, e.p_hat, p));
    }
    check(
        worst <= 4.0 && secs <= 120.0,
        format!("{}; max |z| = {worst:.2} (<= 4); {secs:.1}s (<= 120s)", parts.join(", ")),
    )
}

fn c2_ml_es_limit() -> Outcome {
    let mut r = rng::stream(2);
    let mut worst: f64 = 0.0;
    for i in 0..100u64 {
        let n = r.random_range(1..=10);
        let t = r.random_range(2..=50);
        let s = sample_returns(n, t, rng::substream_seed(2, i), VarianceConvention::UnitVariance).unwrap();
        let w: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let cfg = EsConfig::new(1.0 - 1.0 / t as f64).unwrap();
        let es = expected_shortfall(&w, &s, cfg).map_err(|e| e.to_string())?;
        let ml = maximal_loss(&w, &s).unwrap();
        worst = worst.max((es - ml).abs());
    }
    check(worst <= 1e-10, format!("max |ES - ML| = {worst:.2e} over 100 instances (<= 1e-10)"))
}

fn c3_coherence() -> Outcome {
    let samples: Vec<ReturnSample> = (0..1000u64)
        .map(|i| {
            let mut r = rng::substream(3, i);
            let n = r.random_range(1..=8);
            let t = r.random_range(4..=40);
            sample_returns(n, t, rng::substream_seed(3_000, i), VarianceConvention::UnitVariance).unwrap()
        })
        .collect();
    let es = RiskMeasure::es(0.7).unwrap();
    let a = coherence_check(&es, &samples, 1e-9).map_err(|e| e.to_string())?;
    let b = coherence_check(&EmpiricalVariance, &samples, 1e-9).map_err(|e| e.to_string())?;
    let homog = b.count(Axiom::PositiveHomogeneity);
    check(
        a.is_clean() && homog > 0,
        format!(
            "ES violations = {} over 1000 instances; variance homogeneity violations = {homog}",
            a.violations.len()
        ),
    )
}

fn c4_dominance() -> Outcome {
    let mut instances = 0;
    let mut unbounded = 0;
    let mut ties = 0;
    let mut mismatches = Vec::new();
    let mut bad_rays = 0;
    for n in 2..=6 {
        for t in 2..=6 {
            for j in 0..400u64 {
                let seed = rng::substream_seed(4_000 + 10 * n as u64 + t as u64, j);
                let s = sample_returns(n, t, seed, VarianceConvention::UnitVariance).unwrap();
                let eta = rng::stream(seed ^ 0x5eed).random::<f64>() * 0.8;
                instances += 1;
                let mu = max_dominance(&s).mu_star;
                if (mu - eta).abs() <= 1e-8 {
                    ties += 1;
                    continue;
                }
                let pr = unit_problem(s.clone(), RiskMeasure::MaximalLoss, RegularizerSpec::l1(eta).unwrap());
                let sol = solve(&pr, &SolverOptions::default()).map_err(|e| e.to_string())?;
                let is_unb = sol.status == SolveStatus::Unbounded;
                if is_unb != (mu > eta) {
                    mismatches.push((n, t, j));
                    continue;
                }
                if is_unb {
                    unbounded += 1;
                    let cert = sol.dominance_certificate.as_ref().expect("certificate");
                    let w0 = vec![1.0 / n as f64; n];
                    let ok = (cert.mu_star - mu).abs() <= 1e-9 * (1.0 + mu)
                        && verify_unbounded_ray(&s, &pr.reg, &w0, cert, &[1e-3, 1.0, 1e3]).unwrap_or(false);
                    if !ok {
                        bad_rays += 1;
                    }
                }
            }
        }
    }
    check(
        mismatches.is_empty() && bad_rays == 0,
        format!(
            "{instances} instances, {ties} ties excluded, {unbounded} unbounded; status mismatches = {}, unverified rays = {bad_rays}",
            mismatches.len()
        ),
    )
}

fn c5_p_dichotomy() -> Outcome {
    let mut positive = 0;
    let mut failures = Vec::new();
    let mut j = 0u64;
    while positive < 200 {
        j += 1;
        let mut r = rng::substream(5, j);
        let n = r.random_range(2..=6);
        let t = r.random_range(2..=6);
        let s = sample_returns(n, t, rng::substream_seed(5_000, j), VarianceConvention::UnitVariance).unwrap();
        if max_dominance(&s).mu_star <= 1e-6 {
            continue;
        }
        positive += 1;
        for p in [1.5, 2.0] {
            let pr = unit_problem(s.clone(), RiskMeasure::MaximalLoss, RegularizerSpec::pure_lp(p, 0.1).unwrap());
            match solve(&pr, &SolverOptions::default()) {
                Ok(sol) if sol.status == SolveStatus::Optimal => {}
                other => failures.push(format!("p={p} seed {j}: {:?}", other.map(|s| s.status))),
            }
        }
        let pr = unit_problem(s, RiskMeasure::MaximalLoss, RegularizerSpec::pure_lp(0.5, 0.1).unwrap());
        match solve(&pr, &SolverOptions::default()) {
            Ok(sol) if sol.runaway => {}
            other => failures.push(format!("p=0.5 seed {j}: {:?}", other.map(|s| (s.status, s.runaway)))),
        }
    }
    check(
        failures.is_empty(),
        format!("{positive} dominance-positive instances; {} failures{}", failures.len(), failures.first().map(|f| format!(", first: {f}")).unwrap_or_default()),
    )
}

fn c6_hard_l1() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut bounded = 0;
    let mut j = 0u64;
    while bounded < 100 {
        j += 1;
        let mut r = rng::substream(6, j);
        let n = r.random_range(2..=8);
        let t = r.random_range(10..=40);
        let s = sample_returns(n, t, rng::substream_seed(6_000, j), VarianceConvention::UnitVariance).unwrap();
        let m = RiskMeasure::es(0.7).unwrap();
        let hard = solve(&unit_problem(s.clone(), m, RegularizerSpec::l1(1e3).unwrap()), &SolverOptions::default())
            .map_err(|e| e.to_string())?;
        if hard.status != SolveStatus::Optimal {
            continue;
        }
        bounded += 1;
        let ban = solve_no_short(&unit_problem(s, m, RegularizerSpec::none()), &SolverOptions::default())
            .map_err(|e| e.to_string())?;
        if ban.status != SolveStatus::Optimal {
            return Err(format!("short-ban solve not optimal at instance {j}"));
        }
        for (a, b) in hard.weights.iter().zip(&ban.weights) {
            worst = worst.max((a - b).abs());
        }
    }
    check(worst <= 1e-4, format!("max weight difference {worst:.2e} over 100 instances (<= 1e-4)"))
}

fn fd_gradient(p: &OrderParameters, c: &SaddleContext) -> Result<[f64; 6], String> {
    let natural = [p.lambda, p.epsilon, p.q0, p.delta, p.q0_hat(), p.delta_hat];
    let build = |v: [f64; 6]| OrderParameters {
        lambda: v[0],
        epsilon: v[1],
        q0: v[2],
        delta: v[3],
        s_hat: (-2.0 * v[4]).sqrt(),
        delta_hat: v[5],
    };
    let mut out = [0.0; 6];
    for j in 0..6 {
        let h = 1e-5 * natural[j].abs().max(0.1);
        let (mut a, mut b) = (natural, natural);
        a[j] += h;
        b[j] -= h;
        let fa = free_energy(&build(a), c).map_err(|e| e.to_string())?;
        let fb = free_energy(&build(b), c).map_err(|e| e.to_string())?;
        out[j] = (fa - fb) / (2.0 * h);
    }
    Ok(out)
}

fn c7_replica_consistency() -> Outcome {
    let mut solved: Vec<(SaddleContext, SaddleSolution)> = Vec::new();
    for reg in ["none", "l1:0.05", "en:0.1:0.1", "en:0:0.1", "lp:1.5:0.1", "lp:3:0.2"] {
        let template = SaddleContext::new(2.0, 0.7, reg.parse().unwrap()).unwrap();
        let grid = [0.15, 0.25, 0.35, 0.45];
        let scan = phase_scan(&template, Control::NOverT, &grid).map_err(|e| e.to_string())?;
        for row in scan.rows.iter().filter(|r| r.is_converged()) {
            let ctx = Control::NOverT.apply(&template, row.control).unwrap();
            let sol = solve_saddle(&ctx, None).map_err(|e| e.to_string())?;
            solved.push((ctx, sol));
        }
    }
    let mut worst_res: f64 = 0.0;
    let mut worst_fd: f64 = 0.0;
    for (ctx, sol) in &solved {
        if !sol.converged {
            return Err(format!("solve at tau = {} did not converge", ctx.tau));
        }
        worst_res = worst_res.max(sol.max_residual());
        let fd = fd_gradient(&sol.params, ctx)?;
        for j in 0..6 {
            worst_fd = worst_fd.max((fd[j] - sol.residuals[j]).abs() / (1.0 + fd[j].abs()));
        }
    }
    let one = gaussian_avg(|_| 1.0).unwrap();
    let z2 = gaussian_avg(|z| z * z).unwrap();
    let absz = gaussian_avg_split(|z: f64| z.abs(), &[0.0]).unwrap();
    let quad = (one - 1.0).abs().max((z2 - 1.0).abs()).max((absz - (2.0 / std::f64::consts::PI).sqrt()).abs());
    check(
        !solved.is_empty() && worst_res <= 1e-9 && worst_fd <= 1e-6 && quad <= 1e-10,
        format!(
            "{} saddle points; max residual {worst_res:.1e} (<= 1e-9); max FD mismatch {worst_fd:.1e} (<= 1e-6); quadrature {quad:.1e} (<= 1e-10)",
            solved.len()
        ),
    )
}

fn c8_phase_shift() -> Outcome {
    let grid: Vec<f64> = (0..11).map(|i| 0.40 + 0.02 * i as f64).collect();
    let tpl = |reg: &str| SaddleContext::new(2.0, 0.7, reg.parse().unwrap()).unwrap();
    let plain = phase_scan(&tpl("none"), Control::NOverT, &grid).map_err(|e| e.to_string())?;
    let l1 = phase_scan(&tpl("l1:0.05"), Control::NOverT, &grid).map_err(|e| e.to_string())?;
    let (Some(a), Some(b)) = (plain.critical, l1.critical) else {
        return Err("replica scan found no transition on the grid".into());
    };
    let rising = [&plain, &l1].iter().all(|s| {
        let q: Vec<f64> = s.rows.iter().filter(|r| r.is_converged()).map(|r| r.q0).collect();
        q.windows(2).all(|w| w[1] > w[0])
    });
    let blowup = a.q0_at_converged > 10.0 * plain.rows[0].q0 && b.q0_at_converged > 10.0 * l1.rows[0].q0;
    let replica_ok = b.converged > a.diverged && rising && blowup;

    let start = Instant::now();
    let cfg = |reg: RegularizerSpec| SweepConfig {
        n_assets: 100,
        control: Control::NOverT,
        grid: (0..9).map(|i| 0.36 + 0.04 * i as f64).collect(),
        tau: 2.0,
        beta: 0.7,
        reg,
        n_samples: 60,
        base_seed: 8,
        budget: BudgetSpec::default(),
        output: None,
    };
    let rows0 = mc_sweep(&cfg(RegularizerSpec::none())).map_err(|e| e.to_string())?;
    let rows1 = mc_sweep(&cfg(RegularizerSpec::l1(0.05).unwrap())).map_err(|e| e.to_string())?;
    let t0 = transition_locator(&rows0, 80).map_err(|e| e.to_string())?;
    let t1 = transition_locator(&rows1, 81).map_err(|e| e.to_string())?;
    let mut diffs: Vec<f64> = t1
        .bootstrap_midpoints
        .iter()
        .zip(&t0.bootstrap_midpoints)
        .map(|(x, y)| x - y)
        .collect();
    diffs.sort_by(f64::total_cmp);
    let lower = diffs[(0.025 * (diffs.len() - 1) as f64).floor() as usize];
    check(
        replica_ok && lower > 0.0,
        format!(
            "replica N/T_c: {:.4} (eta=0) < {:.4} (eta=0.05), q0 rising to {:.0} / {:.0}; MC N=100 midpoints {:.4} [{:.4}, {:.4}] vs {:.4} [{:.4}, {:.4}], 2.5% quantile of shift {lower:.4} (> 0); MC {:.0}s",
            a.estimate,
            b.estimate,
            a.q0_at_converged,
            b.q0_at_converged,
            t0.midpoint,
            t0.midpoint_ci.0,
            t0.midpoint_ci.1,
            t1.midpoint,
            t1.midpoint_ci.0,
            t1.midpoint_ci.1,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn c9_replica_vs_mc() -> Outcome {
    let start = Instant::now();
    let reg = RegularizerSpec::elastic_net(0.0, 0.1).unwrap();
    let ctx = SaddleContext::new(2.0, 0.7, reg).unwrap();
    let sol = solve_saddle(&ctx, None).map_err(|e| e.to_string())?;
    if !sol.converged {
        return Err("saddle point did not converge".into());
    }
    let mc = mc_estimate(200, 2.0, 0.7, reg, 100, 9).map_err(|e| e.to_string())?;
    let rel = (mc.q0_mean - sol.params.q0).abs() / sol.params.q0;
    let secs = start.elapsed().as_secs_f64();
    check(
        rel <= 0.10 && mc.n_effective == 100 && secs <= 600.0,
        format!(
            "replica q0 = {:.5}, MC q0 = {:.5} +- {:.5} ({} bounded of 100); relative deviation {rel:.4} (<= 0.10); {secs:.1}s",
            sol.params.q0, mc.q0_mean, mc.q0_stderr, mc.n_effective
        ),
    )
}

fn c10_elastic_net() -> Outcome {
    let grid = [0.005, 0.01, 0.02, 0.04, 0.07, 0.1, 0.15, 0.2];
    let mut notes = Vec::new();
    let mut ok = true;
    for eta1 in [0.0, 0.1] {
        let tpl = SaddleContext::new(1.5, 0.7, RegularizerSpec::elastic_net(eta1, 0.1).unwrap()).unwrap();
        let scan = phase_scan(&tpl, Control::Eta2, &grid).map_err(|e| e.to_string())?;
        let q: Vec<f64> = scan.rows.iter().map(|r| r.q0).collect();
        let finite = scan.rows.iter().all(|r| r.is_converged() && r.q0.is_finite());
        let decreasing = q.windows(2).all(|w| w[1] < w[0]);
        let slopes: Vec<f64> = (1..q.len()).map(|i| (q[i - 1] - q[i]) / (grid[i] - grid[i - 1])).collect();
        let steepest_first = slopes.iter().skip(1).all(|&s| s < slopes[0]);
        ok &= finite && decreasing && steepest_first;
        notes.push(format!("eta1={eta1}: q0 {:.3} -> {:.3}", q[0], q[q.len() - 1]));
    }
    let tpl = SaddleContext::new(1.5, 0.7, RegularizerSpec::elastic_net(0.0, 0.1).unwrap()).unwrap();
    let eta1_grid = [0.0, 0.05, 0.1, 0.2, 0.4, 0.8, 1.6];
    let scan = phase_scan(&tpl, Control::Eta1, &eta1_grid).map_err(|e| e.to_string())?;
    let finite1 = scan.rows.iter().all(|r| r.is_converged() && r.q0.is_finite());
    ok &= finite1;
    notes.push(format!("q0(eta1) at eta2=0.1 finite on {} points: {finite1}", eta1_grid.len()));
    check(ok, notes.join("; "))
}

fn c11_gradients() -> Outcome {
    let mut points = 0;
    let mut worst: f64 = 0.0;
    let mut j = 0u64;
    let regs = [
        RegularizerSpec::pure_lp(1.5, 0.1).unwrap(),
        RegularizerSpec::pure_lp(2.0, 0.3).unwrap(),
        RegularizerSpec::elastic_net(0.2, 0.1).unwrap(),
        RegularizerSpec::pure_lp(3.0, 0.05).unwrap(),
    ];
    let h = 1e-6;
    while points < 100 {
        j += 1;
        let mut r = rng::substream(11, j);
        let n = r.random_range(2..=10);
        let t = r.random_range(5..=40);
        let s = sample_returns(n, t, rng::substream_seed(11_000, j), VarianceConvention::UnitVariance).unwrap();
        let beta = [0.5, 0.7, 0.9][j as usize % 3];
        let reg = regs[j as usize % regs.len()];
        let Ok(measure) = RiskMeasure::es(beta) else { continue };
        if measure.tail_size(t).is_err() {
            continue;
        }
        let pr = unit_problem(s.clone(), measure, reg);
        let w: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        if w.iter().any(|x: &f64| x.abs() < 1e-3) {
            continue;
        }
        // skip points whose sorted losses are nearly tied at the tail boundary
        let mut losses = pr.losses(&w).unwrap().losses().to_vec();
        losses.sort_by(|a, b| b.total_cmp(a));
        let k = pr.tail_size();
        let kf = k.floor() as usize;
        let xmax = s.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let guard = 1e3 * h * xmax * n as f64;
        let near = |i: usize, l: &[f64]| i + 1 < l.len() && (l[i] - l[i + 1]).abs() < guard;
        if (kf >= 1 && near(kf - 1, &losses)) || near(kf, &losses) {
            continue;
        }
        let g = objective_gradient(&pr, &w).unwrap();
        let fd = finite_difference_gradient(&pr, &w, h).unwrap();
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let err = g.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
        worst = worst.max(err);
        points += 1;
    }
    check(worst < 1e-5, format!("max relative gradient error {worst:.2e} at {points} points (< 1e-5)"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("toy instability probability", c1_toy_probability),
        ("ES at beta = 1 - 1/T equals ML", c2_ml_es_limit),
        ("coherence axioms", c3_coherence),
        ("dominance soundness and completeness", c4_dominance),
        ("p dichotomy", c5_p_dichotomy),
        ("hard L1 equals short ban", c6_hard_l1),
        ("saddle-point internal consistency", c7_replica_consistency),
        ("L1 shifts the transition", c8_phase_shift),
        ("saddle point vs Monte Carlo q0", c9_replica_vs_mc),
        ("elastic-net stability", c10_elastic_net),
        ("gradient checks", c11_gradients),
    ];
    let only: Option<usize> = std::env::var("RPO_ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {:>2} PASS [{name}] {d} ({secs:.1}s)", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} FAIL [{name}] {d} ({secs:.1}s)", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
