//! Primal-dual interior-point method (Mehrotra predictor-corrector) for the
//! program with a separable convex penalty.
//!
//! The penalty is written as `l1 |w| + psi(w)` with `psi` smooth. Without an
//! L1 part the weights are free variables; with one they are split as
//! `w = a - b`, `a, b >= 0`, and the L1 part is charged on `a + b`. Under a
//! short ban `w = a >= 0`. Writing `r_t = x_t . w + eps + u_t` for the
//! tail-row slack, the multipliers are `pi` (rows), `nu` (`u >= 0`),
//! `alpha`/`beta` (`a, b >= 0`) and `lambda` (budget). Each Newton step
//! reduces to an `(N+1) x (N+1)` symmetric positive definite system in
//! `(dw, d eps)` plus a scalar Schur complement for the budget multiplier.

use nalgebra::{DMatrix, DVector};

use super::{Duals, PortfolioProblem, PortfolioSolution, SolveStatus, SolverOptions};
use crate::error::Result;
use crate::regularizer::PenaltyParts;

const STEP_FRACTION: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Free,
    Split,
    Ban,
}

#[derive(Clone)]
struct State {
    a: DVector<f64>,
    b: DVector<f64>,
    eps: f64,
    u: DVector<f64>,
    pi: DVector<f64>,
    nu: DVector<f64>,
    alpha: DVector<f64>,
    beta: DVector<f64>,
    lambda: f64,
}

struct Direction {
    a: DVector<f64>,
    b: DVector<f64>,
    eps: f64,
    u: DVector<f64>,
    r: DVector<f64>,
    pi: DVector<f64>,
    nu: DVector<f64>,
    alpha: DVector<f64>,
    beta: DVector<f64>,
    lambda: f64,
}

struct Residuals {
    g_a: DVector<f64>,
    g_b: DVector<f64>,
    g_eps: f64,
    g_u: DVector<f64>,
    budget: f64,
}

struct Ipm {
    /// `N x T`, column `t` is observation `x_t`.
    x: DMatrix<f64>,
    k: f64,
    target: f64,
    phi: PenaltyParts,
    mode: Mode,
}

fn map(v: &DVector<f64>, f: impl Fn(f64) -> f64) -> DVector<f64> {
    v.map(f)
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut s = f64::INFINITY;
    for (x, d) in v.iter().zip(dv.iter()) {
        if *d < 0.0 {
            s = s.min(-x / d);
        }
    }
    s
}

fn empty() -> DVector<f64> {
    DVector::zeros(0)
}

impl Ipm {
    fn new(problem: &PortfolioProblem) -> Self {
        let (n, t) = problem.sample.dims();
        let phi = problem.reg.nonnegative_parts();
        let mode = if problem.short_ban {
            Mode::Ban
        } else if phi.l1 > 0.0 {
            Mode::Split
        } else {
            Mode::Free
        };
        Self {
            x: DMatrix::from_column_slice(n, t, problem.sample.as_slice()),
            k: problem.tail_size(),
            target: problem.budget_target(),
            phi,
            mode,
        }
    }

    fn n(&self) -> usize {
        self.x.nrows()
    }

    fn t(&self) -> usize {
        self.x.ncols()
    }

    fn has_alpha(&self) -> bool {
        self.mode != Mode::Free
    }

    fn has_b(&self) -> bool {
        self.mode == Mode::Split
    }

    /// Derivative of the smooth part at `w`.
    fn psi1(&self, w: f64) -> f64 {
        let a = w.abs();
        let mut d = 2.0 * self.phi.l2 * a;
        if self.phi.power_amp > 0.0 && a > 0.0 {
            d += self.phi.power_amp * self.phi.power * a.powf(self.phi.power - 1.0);
        }
        d.copysign(w)
    }

    fn psi2(&self, w: f64) -> f64 {
        let mut d = 2.0 * self.phi.l2;
        if self.phi.power_amp > 0.0 {
            let a = w.abs().max(1e-12);
            d += self.phi.power_amp * self.phi.power * (self.phi.power - 1.0) * a.powf(self.phi.power - 2.0);
        }
        d
    }

    fn weights(&self, s: &State) -> DVector<f64> {
        if self.has_b() {
            &s.a - &s.b
        } else {
            s.a.clone()
        }
    }

    fn slack(&self, s: &State) -> DVector<f64> {
        let mut r = self.x.tr_mul(&self.weights(s));
        r.add_scalar_mut(s.eps);
        r += &s.u;
        r
    }

    fn initial(&self) -> State {
        let n = self.n();
        let t = self.t();
        let w0 = self.target / n as f64;
        let shift = w0.abs().max(1e-3);
        let (a, b) = match self.mode {
            Mode::Free => (DVector::from_element(n, w0), empty()),
            Mode::Ban => (DVector::from_element(n, w0.max(shift)), empty()),
            Mode::Split => (
                DVector::from_element(n, w0.max(0.0) + shift),
                DVector::from_element(n, (-w0).max(0.0) + shift),
            ),
        };
        let w = DVector::from_element(n, w0);
        let losses = -self.x.tr_mul(&w);
        let mean = losses.mean();
        let spread = (losses.iter().map(|l| (l - mean).abs()).sum::<f64>() / t as f64).max(1e-3);
        let u = map(&losses, |l| (l - mean).max(0.0) + spread);
        let p0 = (self.k / t as f64).clamp(0.05, 0.9);
        let pi = DVector::from_element(t, p0);
        let nu = DVector::from_element(t, 1.0 - p0);
        let dscale = (self.phi.first(shift) + 1.0).max(1.0);
        let alpha = if self.has_alpha() { DVector::from_element(n, dscale) } else { empty() };
        let beta = if self.has_b() { DVector::from_element(n, dscale) } else { empty() };
        State {
            a,
            b,
            eps: mean,
            u,
            pi,
            nu,
            alpha,
            beta,
            lambda: 0.0,
        }
    }

    fn residuals(&self, s: &State) -> Residuals {
        let n = self.n();
        let mut c = &self.x * &s.pi;
        c.add_scalar_mut(s.lambda);
        let w = self.weights(s);
        let l1 = self.phi.l1;
        let (g_a, g_b) = match self.mode {
            Mode::Free => (DVector::from_fn(n, |i, _| self.psi1(w[i]) - c[i]), empty()),
            Mode::Ban => (
                DVector::from_fn(n, |i, _| self.psi1(w[i]) + l1 - c[i] - s.alpha[i]),
                empty(),
            ),
            Mode::Split => (
                DVector::from_fn(n, |i, _| self.psi1(w[i]) + l1 - c[i] - s.alpha[i]),
                DVector::from_fn(n, |i, _| -self.psi1(w[i]) + l1 + c[i] - s.beta[i]),
            ),
        };
        let g_eps = self.k - s.pi.sum();
        let g_u = map(&(&s.pi + &s.nu), |v| 1.0 - v);
        let budget = self.target - w.sum();
        Residuals {
            g_a,
            g_b,
            g_eps,
            g_u,
            budget,
        }
    }

    fn complementarity(&self, s: &State, r: &DVector<f64>) -> f64 {
        let mut total = s.pi.dot(r) + s.nu.dot(&s.u);
        let mut count = 2 * self.t();
        if self.has_alpha() {
            total += s.alpha.dot(&s.a);
            count += self.n();
        }
        if self.has_b() {
            total += s.beta.dot(&s.b);
            count += self.n();
        }
        total / count as f64
    }

    /// Runs the iteration. Returns the final state, whether it met the
    /// stopping test and the iteration count.
    ///
    /// The test asks for `mu <= tol` together with the residual bounds; the
    /// iteration continues to `mu <= 1e-3 tol` so that vanishing weights
    /// settle below the zero threshold, falling back to the first iterate
    /// that met the plain test if progress stops.
    fn run(&self, opts: &SolverOptions) -> (State, bool, usize) {
        let n = self.n();
        let t = self.t();
        let mut s = self.initial();
        let mut accepted: Option<(State, usize)> = None;
        let mut iter = 0;
        let mut start: Option<(f64, f64)> = None;
        let dual_scale = 1.0 + self.phi.l1 + self.k;
        while iter < opts.max_iter {
            let r = self.slack(&s);
            let res = self.residuals(&s);
            let mu = self.complementarity(&s, &r);
            let dual_inf = res
                .g_a
                .amax()
                .max(if self.has_b() { res.g_b.amax() } else { 0.0 })
                .max(res.g_eps.abs())
                .max(res.g_u.amax());
            let feasible = dual_inf <= opts.tol * dual_scale && res.budget.abs() <= opts.tol * (1.0 + self.target.abs());
            if feasible && mu <= opts.tol {
                if mu <= 1e-3 * opts.tol || !self.has_alpha() {
                    return (s, true, iter);
                }
                if accepted.is_none() {
                    accepted = Some((s.clone(), iter));
                }
            }
            iter += 1;
            let (mu0, inf0) = *start.get_or_insert((mu, dual_inf.max(res.budget.abs())));

            // Newton system ingredients. With `h = X dpi + dlambda` the
            // weight rows read `h = d_eff dw - q0`.
            let w = self.weights(&s);
            let psi2 = DVector::from_fn(n, |i, _| self.psi2(w[i]));
            let d_a = match self.mode {
                Mode::Free => empty(),
                _ => s.alpha.component_div(&s.a),
            };
            let d_b = match self.mode {
                Mode::Split => s.beta.component_div(&s.b),
                _ => empty(),
            };
            let d_eff = match self.mode {
                Mode::Free => psi2.clone(),
                Mode::Ban => &psi2 + &d_a,
                Mode::Split => DVector::from_fn(n, |i, _| psi2[i] + d_a[i] * d_b[i] / (d_a[i] + d_b[i])),
            };
            let m = DVector::from_fn(t, |j, _| r[j] + s.pi[j] * s.u[j] / s.nu[j]);
            let theta = s.pi.component_div(&m);
            let mut xs = self.x.clone();
            for (j, mut col) in xs.column_iter_mut().enumerate() {
                col *= theta[j].sqrt();
            }
            let kmat = &xs * xs.transpose();
            let v = &self.x * &theta;
            let theta_sum = theta.sum();
            let mut smat = DMatrix::<f64>::zeros(n + 1, n + 1);
            smat.view_mut((0, 0), (n, n)).copy_from(&kmat);
            for i in 0..n {
                smat[(i, i)] += d_eff[i];
                smat[(i, n)] = v[i];
                smat[(n, i)] = v[i];
            }
            smat[(n, n)] = theta_sum;
            let Some(chol) = factor(smat) else {
                break;
            };
            let mut unit = DVector::zeros(n + 1);
            for i in 0..n {
                unit[i] = 1.0;
            }
            let y2 = chol.solve(&unit);
            let y2_sum: f64 = y2.rows(0, n).sum();

            let solve_dir = |c_pi: &DVector<f64>, c_nu: &DVector<f64>, c_alpha: &DVector<f64>, c_beta: &DVector<f64>| {
                let rhs_a = match self.mode {
                    Mode::Free => -&res.g_a,
                    _ => -&res.g_a + c_alpha.component_div(&s.a),
                };
                let rhs_b = match self.mode {
                    Mode::Split => -&res.g_b + c_beta.component_div(&s.b),
                    _ => empty(),
                };
                let tmp = c_nu - s.u.component_mul(&res.g_u);
                let e = c_pi - s.pi.component_mul(&tmp).component_div(&s.nu);
                let e_over_m = e.component_div(&m);
                let q0 = match self.mode {
                    Mode::Split => {
                        DVector::from_fn(n, |i, _| (d_b[i] * rhs_a[i] - d_a[i] * rhs_b[i]) / (d_a[i] + d_b[i]))
                    }
                    _ => rhs_a.clone(),
                };
                let q = q0 + &self.x * &e_over_m;
                let q_eps = e_over_m.sum() - res.g_eps;
                let mut rhs = DVector::zeros(n + 1);
                rhs.rows_mut(0, n).copy_from(&q);
                rhs[n] = q_eps;
                let y1 = chol.solve(&rhs);
                let dlambda = (res.budget - y1.rows(0, n).sum()) / y2_sum;
                let sol = y1 + &y2 * dlambda;
                let dw = sol.rows(0, n).into_owned();
                let deps = sol[n];
                let mut xtd = self.x.tr_mul(&dw);
                xtd.add_scalar_mut(deps);
                let dpi = &e_over_m - theta.component_mul(&xtd);
                let du = DVector::from_fn(t, |j, _| (c_nu[j] - s.u[j] * res.g_u[j] + s.u[j] * dpi[j]) / s.nu[j]);
                let dnu = &res.g_u - &dpi;
                let (da, db) = match self.mode {
                    Mode::Split => {
                        let da = DVector::from_fn(n, |i, _| {
                            (d_b[i] * dw[i] + rhs_a[i] + rhs_b[i]) / (d_a[i] + d_b[i])
                        });
                        let db = &da - &dw;
                        (da, db)
                    }
                    _ => (dw.clone(), empty()),
                };
                let dalpha = match self.mode {
                    Mode::Free => empty(),
                    _ => DVector::from_fn(n, |i, _| (c_alpha[i] - s.alpha[i] * da[i]) / s.a[i]),
                };
                let dbeta = match self.mode {
                    Mode::Split => DVector::from_fn(n, |i, _| (c_beta[i] - s.beta[i] * db[i]) / s.b[i]),
                    _ => empty(),
                };
                let dr = xtd + &du;
                Direction {
                    a: da,
                    b: db,
                    eps: deps,
                    u: du,
                    r: dr,
                    pi: dpi,
                    nu: dnu,
                    alpha: dalpha,
                    beta: dbeta,
                    lambda: dlambda,
                }
            };

            let step_of = |d: &Direction| -> f64 {
                let mut st = max_step(&r, &d.r)
                    .min(max_step(&s.u, &d.u))
                    .min(max_step(&s.pi, &d.pi))
                    .min(max_step(&s.nu, &d.nu));
                if self.has_alpha() {
                    st = st.min(max_step(&s.a, &d.a)).min(max_step(&s.alpha, &d.alpha));
                }
                if self.has_b() {
                    st = st.min(max_step(&s.b, &d.b)).min(max_step(&s.beta, &d.beta));
                }
                st
            };

            let pair = |x: &DVector<f64>, dx: &DVector<f64>, y: &DVector<f64>, dy: &DVector<f64>, st: f64| {
                (x + dx * st).dot(&(y + dy * st))
            };

            // Predictor.
            let c_pi = -s.pi.component_mul(&r);
            let c_nu = -s.nu.component_mul(&s.u);
            let c_alpha = if self.has_alpha() { -s.alpha.component_mul(&s.a) } else { empty() };
            let c_beta = -s.beta.component_mul(&s.b);
            let aff = solve_dir(&c_pi, &c_nu, &c_alpha, &c_beta);
            let step_aff = step_of(&aff).min(1.0);
            let mut mu_aff_total =
                pair(&s.pi, &aff.pi, &r, &aff.r, step_aff) + pair(&s.nu, &aff.nu, &s.u, &aff.u, step_aff);
            let mut count = 2 * t;
            if self.has_alpha() {
                mu_aff_total += pair(&s.alpha, &aff.alpha, &s.a, &aff.a, step_aff);
                count += n;
            }
            if self.has_b() {
                mu_aff_total += pair(&s.beta, &aff.beta, &s.b, &aff.b, step_aff);
                count += n;
            }
            let mu_aff = mu_aff_total / count as f64;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
            // keep the barrier from collapsing ahead of the infeasibility
            let floor = if inf0 > 0.0 {
                0.1 * mu0 * dual_inf.max(res.budget.abs()) / inf0
            } else {
                0.0
            };
            let target = (sigma * mu).max(floor.min(mu));

            // Corrector.
            let c_pi = map(&(c_pi - aff.pi.component_mul(&aff.r)), |v| v + target);
            let c_nu = map(&(c_nu - aff.nu.component_mul(&aff.u)), |v| v + target);
            let c_alpha = if self.has_alpha() {
                map(&(c_alpha - aff.alpha.component_mul(&aff.a)), |v| v + target)
            } else {
                empty()
            };
            let c_beta = map(&(c_beta - aff.beta.component_mul(&aff.b)), |v| v + target);
            let dir = solve_dir(&c_pi, &c_nu, &c_alpha, &c_beta);
            let step = (STEP_FRACTION * step_of(&dir)).min(1.0);
            if !(step > 0.0) || !step.is_finite() {
                break;
            }
            s.a += &dir.a * step;
            s.b += &dir.b * step;
            s.beta += &dir.beta * step;
            s.alpha += &dir.alpha * step;
            s.eps += dir.eps * step;
            s.u += &dir.u * step;
            s.pi += &dir.pi * step;
            s.nu += &dir.nu * step;
            s.lambda += dir.lambda * step;
        }
        match accepted {
            Some((state, it)) => (state, true, it),
            None => (s, false, iter),
        }
    }
}

fn factor(mut smat: DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let scale = (0..smat.nrows()).map(|i| smat[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut jitter = 0.0;
    for _ in 0..6 {
        if let Some(c) = smat.clone().cholesky() {
            return Some(c);
        }
        let next = if jitter == 0.0 { 1e-14 * scale } else { jitter * 100.0 };
        for i in 0..smat.nrows() {
            smat[(i, i)] += next - jitter;
        }
        jitter = next;
    }
    None
}

pub(super) fn solve(problem: &PortfolioProblem, opts: &SolverOptions) -> Result<PortfolioSolution> {
    let ipm = Ipm::new(problem);
    let (state, converged, iterations) = ipm.run(opts);
    let w = ipm.weights(&state);
    let status = if converged {
        SolveStatus::Optimal
    } else {
        SolveStatus::MaxIterations
    };
    let mut out = PortfolioSolution::from_weights(problem, status, w.as_slice().to_vec(), iterations)?;
    out.duals = Some(Duals {
        pi: state.pi.as_slice().to_vec(),
        lambda: state.lambda,
    });
    Ok(out)
}
