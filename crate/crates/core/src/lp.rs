//! Dense two-phase primal simplex for small linear programs.
//!
//! Problems are stated as `min c . x` subject to linear rows and `x >= 0`.
//! Pricing is Dantzig's rule; after a run of degenerate pivots it falls back
//! to Bland's rule, which cannot cycle, and returns to Dantzig once a pivot
//! makes progress.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
struct Row {
    coeffs: Vec<(usize, f64)>,
    relation: Relation,
    rhs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Unbounded,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal point (the last basic solution when not optimal).
    pub x: Vec<f64>,
    pub objective: f64,
    /// One multiplier per row, in the sign convention `c - A^T y >= 0` on the
    /// columns: `y >= 0` on `Ge` rows, `y <= 0` on `Le` rows.
    pub duals: Vec<f64>,
    /// Direction `d >= 0` with `A d` respecting the homogeneous rows and
    /// `c . d < 0`, when `status` is `Unbounded`.
    pub ray: Option<Vec<f64>>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub max_iterations: usize,
    pub pivot_tol: f64,
    pub optimality_tol: f64,
    pub feasibility_tol: f64,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub degenerate_switch: usize,
    /// Recompute the final basic solution and duals with an LU factorization.
    pub polish: bool,
    /// Shift zero right-hand sides of `<=` rows by tiny distinct amounts
    /// while pivoting, so that degenerate vertices do not stall the method.
    /// The reported solution is recomputed from the true right-hand side.
    pub perturb: bool,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_iterations: 0,
            pivot_tol: 1e-9,
            optimality_tol: 1e-9,
            feasibility_tol: 1e-7,
            degenerate_switch: 50,
            polish: true,
            perturb: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    n_vars: usize,
    objective: Vec<f64>,
    rows: Vec<Row>,
}

impl LinearProgram {
    /// Minimize `objective . x` over `x >= 0`.
    pub fn new(objective: Vec<f64>) -> Self {
        Self {
            n_vars: objective.len(),
            objective,
            rows: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    /// Adds `sum coeffs[j].1 * x[coeffs[j].0]  (relation)  rhs`.
    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        debug_assert!(coeffs.iter().all(|&(j, _)| j < self.n_vars));
        self.rows.push(Row { coeffs, relation, rhs });
    }

    pub fn add_dense_row(&mut self, coeffs: &[f64], relation: Relation, rhs: f64) {
        let sparse = coeffs
            .iter()
            .enumerate()
            .filter(|(_, &a)| a != 0.0)
            .map(|(j, &a)| (j, a))
            .collect();
        self.add_row(sparse, relation, rhs);
    }

    /// Largest violation of the rows and bounds at `x`.
    pub fn infeasibility(&self, x: &[f64]) -> f64 {
        let mut worst = x.iter().map(|&v| (-v).max(0.0)).fold(0.0, f64::max);
        for row in &self.rows {
            let lhs: f64 = row.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            let v = match row.relation {
                Relation::Le => (lhs - row.rhs).max(0.0),
                Relation::Ge => (row.rhs - lhs).max(0.0),
                Relation::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(v);
        }
        worst
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    pub fn solve(&self) -> LpSolution {
        self.solve_with(&SimplexOptions::default())
    }

    pub fn solve_with(&self, opts: &SimplexOptions) -> LpSolution {
        Tableau::build(self, opts.perturb).run(self, opts)
    }
}

/// Dense tableau over the standardized rows (`rhs >= 0`). Column layout:
/// structural variables, then one identity column per row (slack for `Le`,
/// artificial for `Ge`/`Eq`), then surplus columns for `Ge` rows.
struct Tableau {
    m: usize,
    n_struct: usize,
    width: usize,
    /// Row-major `m x (n_cols + 1)`, last column is the right-hand side.
    a: Vec<f64>,
    basis: Vec<usize>,
    /// Row sign applied during standardization.
    sign: Vec<f64>,
    /// Column of row `i`'s identity column.
    ident: Vec<usize>,
    artificial: Vec<bool>,
    n_cols: usize,
    /// Standardized sparse rows, kept for the final LU polish.
    std_rows: Vec<Vec<(usize, f64)>>,
    std_rhs: Vec<f64>,
}

impl Tableau {
    fn build(lp: &LinearProgram, perturb: bool) -> Self {
        let m = lp.rows.len();
        let n_struct = lp.n_vars;
        let mut sign = vec![1.0; m];
        let mut relations = Vec::with_capacity(m);
        for (i, row) in lp.rows.iter().enumerate() {
            let mut rel = row.relation;
            if row.rhs < 0.0 || (row.rhs == 0.0 && rel == Relation::Ge) {
                sign[i] = -1.0;
                rel = match rel {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
            }
            relations.push(rel);
        }
        let n_surplus = relations.iter().filter(|&&r| r == Relation::Ge).count();
        let n_cols = n_struct + m + n_surplus;
        let width = n_cols + 1;
        let mut a = vec![0.0; m * width];
        let mut ident = Vec::with_capacity(m);
        let mut artificial = vec![false; n_cols];
        let mut std_rows = Vec::with_capacity(m);
        let mut std_rhs = Vec::with_capacity(m);
        let mut surplus = n_struct + m;
        let rhs_scale = 1.0 + lp.rows.iter().fold(0.0f64, |acc, r| acc.max(r.rhs.abs()));
        for (i, row) in lp.rows.iter().enumerate() {
            let base = i * width;
            let mut sr = Vec::with_capacity(row.coeffs.len() + 2);
            for &(j, v) in &row.coeffs {
                a[base + j] += sign[i] * v;
            }
            for &(j, _) in &row.coeffs {
                if a[base + j] != 0.0 && !sr.iter().any(|&(k, _)| k == j) {
                    sr.push((j, a[base + j]));
                }
            }
            let id = n_struct + i;
            a[base + id] = 1.0;
            sr.push((id, 1.0));
            ident.push(id);
            if relations[i] != Relation::Le {
                artificial[id] = true;
            }
            if relations[i] == Relation::Ge {
                a[base + surplus] = -1.0;
                sr.push((surplus, -1.0));
                surplus += 1;
            }
            let rhs = sign[i] * row.rhs;
            a[base + n_cols] = if perturb && rhs == 0.0 && relations[i] == Relation::Le {
                1e-9 * rhs_scale * (1.0 + (i as f64 * 0.618_033_988_749_895).fract())
            } else {
                rhs
            };
            std_rows.push(sr);
            std_rhs.push(rhs);
        }
        Self {
            m,
            n_struct,
            width,
            a,
            basis: ident.clone(),
            sign,
            ident,
            artificial,
            n_cols,
            std_rows,
            std_rhs,
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.a[i * self.width + self.n_cols]
    }

    /// Reduced-cost row `c_j - c_B B^{-1} A_j` (last entry is `-c_B x_B`).
    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; self.width];
        d[..self.n_cols].copy_from_slice(&cost[..self.n_cols]);
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.a[i * self.width..(i + 1) * self.width];
                for (dj, &aij) in d.iter_mut().zip(row) {
                    *dj -= cb * aij;
                }
            }
        }
        d
    }

    fn pivot(&mut self, r: usize, c: usize, d: &mut [f64]) {
        let w = self.width;
        let inv = 1.0 / self.a[r * w + c];
        {
            let row = &mut self.a[r * w..(r + 1) * w];
            for v in row.iter_mut() {
                *v *= inv;
            }
            row[c] = 1.0;
        }
        let (before, rest) = self.a.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        let nz: Vec<usize> = (0..w).filter(|&j| prow[j] != 0.0).collect();
        let eliminate = |row: &mut [f64]| {
            let f = row[c];
            if f != 0.0 {
                for &j in &nz {
                    row[j] -= f * prow[j];
                }
                row[c] = 0.0;
            }
        };
        before.chunks_exact_mut(w).for_each(eliminate);
        after.chunks_exact_mut(w).for_each(eliminate);
        let f = d[c];
        if f != 0.0 {
            for &j in &nz {
                d[j] -= f * prow[j];
            }
            d[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Primal simplex iterations on reduced-cost row `d`. `allowed` filters
    /// entering columns. Returns the unbounded entering column, if any.
    fn iterate(
        &mut self,
        d: &mut [f64],
        allowed: &dyn Fn(usize) -> bool,
        opts: &SimplexOptions,
        iterations: &mut usize,
        limit: usize,
    ) -> Result<(), PhaseEnd> {
        let mut degenerate_run = 0usize;
        let mut col_buf = vec![0.0; self.m];
        loop {
            if *iterations >= limit {
                return Err(PhaseEnd::Limit);
            }
            let bland = degenerate_run >= opts.degenerate_switch;
            let mut enter = None;
            let mut best = -opts.optimality_tol;
            for j in 0..self.n_cols {
                if d[j] < best && allowed(j) {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = d[j];
                }
            }
            let Some(c) = enter else {
                return Ok(());
            };
            for (i, v) in col_buf.iter_mut().enumerate() {
                *v = self.at(i, c);
            }
            let mut leave: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for i in 0..self.m {
                let aic = col_buf[i];
                if aic > opts.pivot_tol {
                    let ratio = self.rhs(i).max(0.0) / aic;
                    let take = match leave {
                        None => true,
                        Some(l) => {
                            let tie = (ratio - best_ratio).abs() <= 1e-12 * (1.0 + best_ratio.abs());
                            if !tie {
                                ratio < best_ratio
                            } else if bland {
                                self.basis[i] < self.basis[l]
                            } else {
                                aic > col_buf[l]
                            }
                        }
                    };
                    if take {
                        best_ratio = best_ratio.min(ratio);
                        leave = Some(i);
                    }
                }
            }
            let Some(r) = leave else {
                return Err(PhaseEnd::Unbounded(c));
            };
            if best_ratio * (-d[c]) <= 1e-14 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(r, c, d);
            *iterations += 1;
        }
    }

    fn run(mut self, lp: &LinearProgram, opts: &SimplexOptions) -> LpSolution {
        let limit = if opts.max_iterations == 0 {
            50 * (self.m + self.n_cols) + 1000
        } else {
            opts.max_iterations
        };
        let mut iterations = 0usize;
        let n_cols = self.n_cols;

        // Phase 1.
        if self.artificial.iter().any(|&b| b) {
            let cost1: Vec<f64> = (0..n_cols).map(|j| if self.artificial[j] { 1.0 } else { 0.0 }).collect();
            let mut d = self.reduced_costs(&cost1);
            let art = self.artificial.clone();
            let res = self.iterate(&mut d, &|j| !art[j], opts, &mut iterations, limit);
            if let Err(PhaseEnd::Limit) = res {
                return self.finish(lp, LpStatus::IterationLimit, None, iterations, opts);
            }
            let infeas = -d[n_cols];
            let scale = 1.0 + self.std_rhs.iter().fold(0.0f64, |acc, b| acc.max(b.abs()));
            if infeas > opts.feasibility_tol * scale {
                return self.finish(lp, LpStatus::Infeasible, None, iterations, opts);
            }
            // Drive zero-level artificials out of the basis where possible.
            for r in 0..self.m {
                if self.artificial[self.basis[r]] {
                    let c = (0..n_cols)
                        .filter(|&j| !self.artificial[j])
                        .max_by(|&x, &y| self.at(r, x).abs().total_cmp(&self.at(r, y).abs()));
                    if let Some(c) = c {
                        if self.at(r, c).abs() > opts.pivot_tol {
                            self.pivot(r, c, &mut d);
                        }
                    }
                }
            }
        }

        // Phase 2.
        let mut cost2 = vec![0.0; n_cols];
        cost2[..self.n_struct].copy_from_slice(&lp.objective);
        let mut d = self.reduced_costs(&cost2);
        let art = self.artificial.clone();
        match self.iterate(&mut d, &|j| !art[j], opts, &mut iterations, limit) {
            Ok(()) => self.finish(lp, LpStatus::Optimal, None, iterations, opts),
            Err(PhaseEnd::Limit) => self.finish(lp, LpStatus::IterationLimit, None, iterations, opts),
            Err(PhaseEnd::Unbounded(c)) => {
                let mut ray = vec![0.0; n_cols];
                ray[c] = 1.0;
                for i in 0..self.m {
                    ray[self.basis[i]] = -self.at(i, c);
                }
                ray.truncate(self.n_struct);
                self.finish(lp, LpStatus::Unbounded, Some(ray), iterations, opts)
            }
        }
    }

    fn finish(
        &self,
        lp: &LinearProgram,
        status: LpStatus,
        ray: Option<Vec<f64>>,
        iterations: usize,
        opts: &SimplexOptions,
    ) -> LpSolution {
        let mut full = vec![0.0; self.n_cols];
        for i in 0..self.m {
            full[self.basis[i]] = self.rhs(i).max(0.0);
        }
        let mut cost = vec![0.0; self.n_cols];
        cost[..self.n_struct].copy_from_slice(&lp.objective);
        let d = self.reduced_costs(&cost);
        let mut duals: Vec<f64> = (0..self.m).map(|i| -d[self.ident[i]] * self.sign[i]).collect();

        if opts.polish && status == LpStatus::Optimal && self.m > 0 {
            if let Some((xb, y)) = self.lu_polish(&cost) {
                if xb.iter().all(|&v| v >= -opts.feasibility_tol) {
                    full.iter_mut().for_each(|v| *v = 0.0);
                    for (i, &v) in xb.iter().enumerate() {
                        full[self.basis[i]] = v.max(0.0);
                    }
                    duals = y.iter().zip(&self.sign).map(|(v, s)| v * s).collect();
                }
            }
        }
        full.truncate(self.n_struct);
        let objective = lp.evaluate(&full);
        LpSolution {
            status,
            x: full,
            objective,
            duals,
            ray,
            iterations,
        }
    }

    /// Solves `B x_B = b` and `B^T y = c_B` from the standardized rows.
    fn lu_polish(&self, cost: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let m = self.m;
        let mut pos = vec![usize::MAX; self.n_cols];
        for (k, &j) in self.basis.iter().enumerate() {
            pos[j] = k;
        }
        let mut b = DMatrix::<f64>::zeros(m, m);
        for (i, row) in self.std_rows.iter().enumerate() {
            for &(j, v) in row {
                if pos[j] != usize::MAX {
                    b[(i, pos[j])] += v;
                }
            }
        }
        let lu = b.clone().lu();
        let xb = lu.solve(&DVector::from_column_slice(&self.std_rhs))?;
        let cb = DVector::from_iterator(m, self.basis.iter().map(|&j| cost[j]));
        let y = b.transpose().lu().solve(&cb)?;
        if xb.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return None;
        }
        Some((xb.as_slice().to_vec(), y.as_slice().to_vec()))
    }
}

enum PhaseEnd {
    Limit,
    Unbounded(usize),
}
