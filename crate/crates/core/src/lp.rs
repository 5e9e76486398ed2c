//! Primal simplex for linear programs in equality form.
//!
//! Problems are `min c'x  s.t.  A x = b` with every variable either nonnegative or free.
//! Free variables are split internally into a difference of two nonnegative columns.
//! The solver keeps an explicit dense basis inverse, which is adequate for the
//! desk-scale problems quantile regression produces (a few thousand rows).
//!
//! Pricing is Dantzig's most-negative reduced cost until `3 (r + m)` consecutive
//! degenerate pivots have been seen; from then on Bland's smallest-index rule is used
//! for both entering and leaving choices, which rules out cycling.

use crate::error::{Error, Result};

pub const PIVOT_TOL: f64 = 1e-9;
const OPTIMALITY_TOL: f64 = 1e-9;
const RATIO_TIE_TOL: f64 = 1e-12;
const DEGENERATE_STEP: f64 = 1e-12;
const DUAL_REFRESH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LowerBound {
    Zero,
    Free,
}

/// `min cost'x  s.t.  a_eq x = b_eq`, with columns stored sparsely.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    cost: Vec<f64>,
    columns: Vec<Vec<(usize, f64)>>,
    lower_bounds: Vec<LowerBound>,
    b_eq: Vec<f64>,
}

impl LinearProgram {
    pub fn new(b_eq: Vec<f64>) -> Self {
        LinearProgram {
            cost: Vec::new(),
            columns: Vec::new(),
            lower_bounds: Vec::new(),
            b_eq,
        }
    }

    /// Appends a variable with the given objective coefficient and `(row, value)` entries.
    /// Zero entries are dropped; repeated rows are summed.
    pub fn add_variable(&mut self, cost: f64, lower: LowerBound, entries: &[(usize, f64)]) -> usize {
        let mut col: Vec<(usize, f64)> = entries.to_vec();
        col.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(col.len());
        for (r, v) in col {
            match merged.last_mut() {
                Some(last) if last.0 == r => last.1 += v,
                _ => merged.push((r, v)),
            }
        }
        merged.retain(|e| e.1 != 0.0);
        self.cost.push(cost);
        self.columns.push(merged);
        self.lower_bounds.push(lower);
        self.cost.len() - 1
    }

    pub fn n_rows(&self) -> usize {
        self.b_eq.len()
    }

    pub fn n_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn cost(&self) -> &[f64] {
        &self.cost
    }

    pub fn b_eq(&self) -> &[f64] {
        &self.b_eq
    }

    pub fn column(&self, j: usize) -> &[(usize, f64)] {
        &self.columns[j]
    }

    pub fn lower_bounds(&self) -> &[LowerBound] {
        &self.lower_bounds
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.cost.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// `max_i |(A x - b)_i|`.
    pub fn residual_inf(&self, x: &[f64]) -> f64 {
        let mut r: Vec<f64> = self.b_eq.iter().map(|b| -b).collect();
        for (col, &v) in self.columns.iter().zip(x) {
            for &(i, a) in col {
                r[i] += a * v;
            }
        }
        r.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest bound violation over nonnegative variables.
    pub fn bound_violation(&self, x: &[f64]) -> f64 {
        self.lower_bounds
            .iter()
            .zip(x)
            .filter(|(lb, _)| **lb == LowerBound::Zero)
            .fold(0.0, |m, (_, v)| m.max(-v))
    }

    /// Lower bound `b'y` certified by dual feasibility of `y`: every reduced cost
    /// `c_j - a_j'y` must be nonnegative (zero for free variables) within `tol`.
    /// Returns `None` when `y` is not dual feasible.
    pub fn dual_bound(&self, y: &[f64], tol: f64) -> Option<f64> {
        if y.len() != self.n_rows() {
            return None;
        }
        for j in 0..self.n_vars() {
            let d = self.cost[j] - self.columns[j].iter().map(|&(i, a)| a * y[i]).sum::<f64>();
            let scale = tol * (1.0 + self.cost[j].abs());
            let ok = match self.lower_bounds[j] {
                LowerBound::Zero => d >= -scale,
                LowerBound::Free => d.abs() <= scale,
            };
            if !ok {
                return None;
            }
        }
        Some(self.b_eq.iter().zip(y).map(|(b, v)| b * v).sum())
    }

    fn check(&self) -> Result<()> {
        let r = self.n_rows();
        if let Some(b) = self.b_eq.iter().find(|b| !b.is_finite()) {
            return Err(Error::validation(format!("non-finite right-hand side {b}")));
        }
        if let Some(c) = self.cost.iter().find(|c| !c.is_finite()) {
            return Err(Error::validation(format!("non-finite cost {c}")));
        }
        for (j, col) in self.columns.iter().enumerate() {
            for &(i, a) in col {
                if i >= r {
                    return Err(Error::dimension(format!(
                        "variable {j} references row {i} of {r}"
                    )));
                }
                if !a.is_finite() {
                    return Err(Error::validation(format!("non-finite entry in column {j}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PivotRule {
    /// Most negative reduced cost, switching to Bland on prolonged degeneracy.
    #[default]
    Dantzig,
    /// Smallest-index rule throughout.
    Bland,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SolveOptions {
    pub pivot_rule: PivotRule,
    /// Total pivot cap over both phases; `None` means `50 (r + m)`.
    pub iteration_limit: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Unbounded,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: LpStatus,
    pub iterations: usize,
    /// Row duals `y` of the final basis (`c_B' B^-1`), in the caller's row orientation.
    pub duals: Vec<f64>,
    pub bland_engaged: bool,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Origin {
    /// Original variable `j`, entering with the given sign (`-1` for the negative half of a free split).
    Var(usize, i8),
    Artificial,
}

struct Column {
    entries: Vec<(usize, f64)>,
    cost: f64,
    origin: Origin,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
    IterationLimit,
}

struct Simplex {
    r: usize,
    cols: Vec<Column>,
    b: Vec<f64>,
    basis: Vec<usize>,
    basic_pos: Vec<Option<usize>>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    iterations: usize,
    limit: usize,
    rule: PivotRule,
    bland: bool,
    degenerate_run: usize,
    degenerate_cap: usize,
}

pub fn solve(lp: &LinearProgram, opts: &SolveOptions) -> Result<LpSolution> {
    lp.check()?;
    let m = lp.n_vars();

    // Drop empty rows; an empty row with nonzero rhs is infeasible outright.
    let mut row_used = vec![false; lp.n_rows()];
    for col in &lp.columns {
        for &(i, _) in col {
            row_used[i] = true;
        }
    }
    let mut row_map = vec![usize::MAX; lp.n_rows()];
    let mut kept = Vec::new();
    for (i, used) in row_used.iter().enumerate() {
        if *used {
            row_map[i] = kept.len();
            kept.push(i);
        } else if lp.b_eq[i].abs() > PIVOT_TOL {
            return Ok(LpSolution {
                x: vec![0.0; m],
                objective: 0.0,
                status: LpStatus::Infeasible,
                iterations: 0,
                duals: vec![0.0; lp.n_rows()],
                bland_engaged: false,
            });
        }
    }
    let r = kept.len();
    let sign: Vec<f64> = kept
        .iter()
        .map(|&i| if lp.b_eq[i] < 0.0 { -1.0 } else { 1.0 })
        .collect();
    let b: Vec<f64> = kept.iter().zip(&sign).map(|(&i, s)| s * lp.b_eq[i]).collect();

    let mut cols = Vec::with_capacity(m + r);
    for j in 0..m {
        let entries: Vec<(usize, f64)> = lp.columns[j]
            .iter()
            .map(|&(i, a)| (row_map[i], sign[row_map[i]] * a))
            .collect();
        if lp.lower_bounds[j] == LowerBound::Free {
            cols.push(Column {
                entries: entries.clone(),
                cost: lp.cost[j],
                origin: Origin::Var(j, 1),
            });
            cols.push(Column {
                entries: entries.iter().map(|&(i, a)| (i, -a)).collect(),
                cost: -lp.cost[j],
                origin: Origin::Var(j, -1),
            });
        } else {
            cols.push(Column {
                entries,
                cost: lp.cost[j],
                origin: Origin::Var(j, 1),
            });
        }
    }
    let n_structural = cols.len();

    // Crash basis: per row, the first singleton column with a positive coefficient.
    let mut basis = vec![usize::MAX; r];
    for (k, col) in cols.iter().enumerate() {
        if let [(i, a)] = col.entries[..] {
            if a > 0.0 && basis[i] == usize::MAX {
                basis[i] = k;
            }
        }
    }
    for (i, slot) in basis.iter_mut().enumerate() {
        if *slot == usize::MAX {
            cols.push(Column {
                entries: vec![(i, 1.0)],
                cost: 0.0,
                origin: Origin::Artificial,
            });
            *slot = cols.len() - 1;
        }
    }
    let has_artificial = cols.len() > n_structural;

    let mut binv = vec![0.0; r * r];
    let mut xb = vec![0.0; r];
    let mut basic_pos = vec![None; cols.len()];
    for (i, &k) in basis.iter().enumerate() {
        let a = cols[k].entries[0].1;
        binv[i * r + i] = 1.0 / a;
        xb[i] = b[i] / a;
        basic_pos[k] = Some(i);
    }

    let limit = opts.iteration_limit.unwrap_or(50 * (r + m).max(1));
    let mut sx = Simplex {
        r,
        cols,
        b,
        basis,
        basic_pos,
        binv,
        xb,
        iterations: 0,
        limit,
        rule: opts.pivot_rule,
        bland: opts.pivot_rule == PivotRule::Bland,
        degenerate_run: 0,
        degenerate_cap: 3 * (r + m),
    };

    let finish = |sx: &mut Simplex, status: LpStatus| -> LpSolution {
        sx.refine();
        let mut x = vec![0.0; m];
        for (i, &k) in sx.basis.iter().enumerate() {
            if let Origin::Var(j, s) = sx.cols[k].origin {
                let v = if sx.xb[i] < 0.0 && sx.xb[i] > -PIVOT_TOL { 0.0 } else { sx.xb[i] };
                x[j] += f64::from(s) * v;
            }
        }
        let structural_cost: Vec<f64> = sx.cols.iter().map(|c| c.cost).collect();
        let y_int = sx.basis_duals(&structural_cost);
        let mut duals = vec![0.0; lp.n_rows()];
        for (ii, &orig) in kept.iter().enumerate() {
            duals[orig] = sign[ii] * y_int[ii];
        }
        LpSolution {
            objective: lp.objective_at(&x),
            x,
            status,
            iterations: sx.iterations,
            duals,
            bland_engaged: sx.bland,
        }
    };

    if has_artificial {
        let phase1_cost: Vec<f64> = sx
            .cols
            .iter()
            .map(|c| if c.origin == Origin::Artificial { 1.0 } else { 0.0 })
            .collect();
        match sx.run(&phase1_cost, true) {
            PhaseEnd::IterationLimit => return Ok(finish(&mut sx, LpStatus::IterationLimit)),
            PhaseEnd::Unbounded => unreachable!("phase one objective is bounded below by zero"),
            PhaseEnd::Optimal => {}
        }
        let infeasibility: f64 = sx
            .basis
            .iter()
            .zip(&sx.xb)
            .filter(|(&k, _)| sx.cols[k].origin == Origin::Artificial)
            .map(|(_, v)| v.max(0.0))
            .sum();
        let scale = sx.b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if infeasibility > PIVOT_TOL * scale {
            return Ok(finish(&mut sx, LpStatus::Infeasible));
        }
        sx.drive_out_artificials();
    }

    let phase2_cost: Vec<f64> = sx.cols.iter().map(|c| c.cost).collect();
    let status = match sx.run(&phase2_cost, false) {
        PhaseEnd::Optimal => LpStatus::Optimal,
        PhaseEnd::Unbounded => LpStatus::Unbounded,
        PhaseEnd::IterationLimit => LpStatus::IterationLimit,
    };
    Ok(finish(&mut sx, status))
}

impl Simplex {
    fn reduced_cost(&self, k: usize, cost: &[f64], y: &[f64]) -> f64 {
        cost[k] - self.cols[k].entries.iter().map(|&(i, a)| a * y[i]).sum::<f64>()
    }

    /// `B^-1 a_k`.
    fn ftran(&self, k: usize) -> Vec<f64> {
        let r = self.r;
        let mut alpha = vec![0.0; r];
        for &(row, a) in &self.cols[k].entries {
            for (i, al) in alpha.iter_mut().enumerate() {
                *al += self.binv[i * r + row] * a;
            }
        }
        alpha
    }

    fn run(&mut self, cost: &[f64], phase_one: bool) -> PhaseEnd {
        let r = self.r;
        let mut y = self.basis_duals(cost);
        let mut since_refresh = 0usize;
        loop {
            if since_refresh >= DUAL_REFRESH {
                y = self.basis_duals(cost);
                since_refresh = 0;
            }
            // Pricing.
            let mut entering: Option<(usize, f64)> = None;
            for k in 0..self.cols.len() {
                if self.basic_pos[k].is_some() {
                    continue;
                }
                if !phase_one && self.cols[k].origin == Origin::Artificial {
                    continue;
                }
                let d = self.reduced_cost(k, cost, &y);
                if d >= -OPTIMALITY_TOL {
                    continue;
                }
                if self.bland {
                    entering = Some((k, d));
                    break;
                }
                if entering.is_none_or(|(_, best)| d < best) {
                    entering = Some((k, d));
                }
            }
            let Some((q, dq)) = entering else {
                return PhaseEnd::Optimal;
            };
            if self.iterations >= self.limit {
                return PhaseEnd::IterationLimit;
            }

            let alpha = self.ftran(q);

            // Ratio test.
            let mut theta = f64::INFINITY;
            for i in 0..r {
                if let Some(ratio) = self.ratio(i, alpha[i], phase_one) {
                    theta = theta.min(ratio);
                }
            }
            if theta == f64::INFINITY {
                return PhaseEnd::Unbounded;
            }
            let mut leave: Option<usize> = None;
            for i in 0..r {
                let Some(ratio) = self.ratio(i, alpha[i], phase_one) else {
                    continue;
                };
                if ratio > theta + RATIO_TIE_TOL {
                    continue;
                }
                leave = match leave {
                    None => Some(i),
                    Some(cur) => {
                        let better = if self.bland {
                            self.basis[i] < self.basis[cur]
                        } else {
                            let (a, b) = (alpha[i].abs(), alpha[cur].abs());
                            a > b || (a == b && self.basis[i] < self.basis[cur])
                        };
                        if better { Some(i) } else { Some(cur) }
                    }
                };
            }
            let p = leave.expect("ratio test found a row");
            let step = (self.xb[p].max(0.0)) / alpha[p];
            let step = if self.cols[self.basis[p]].origin == Origin::Artificial && !phase_one {
                0.0
            } else {
                step
            };

            self.pivot(p, q, &alpha, step);
            self.iterations += 1;

            if step.abs() <= DEGENERATE_STEP {
                self.degenerate_run += 1;
                if !self.bland && self.rule == PivotRule::Dantzig && self.degenerate_run >= self.degenerate_cap {
                    self.bland = true;
                }
            } else {
                self.degenerate_run = 0;
            }

            // y' = y + d_q * (row p of the updated inverse)
            let row = &self.binv[p * r..(p + 1) * r];
            for (yk, bk) in y.iter_mut().zip(row) {
                *yk += dq * bk;
            }
            since_refresh += 1;
        }
    }

    fn basis_duals(&self, cost: &[f64]) -> Vec<f64> {
        let r = self.r;
        let mut y = vec![0.0; r];
        for (i, &k) in self.basis.iter().enumerate() {
            let c = cost[k];
            if c != 0.0 {
                let row = &self.binv[i * r..(i + 1) * r];
                for (yk, bk) in y.iter_mut().zip(row) {
                    *yk += c * bk;
                }
            }
        }
        y
    }

    /// Step length allowed by row `i`, if it limits the entering direction.
    fn ratio(&self, i: usize, a: f64, phase_one: bool) -> Option<f64> {
        let fixed_at_zero = !phase_one && self.cols[self.basis[i]].origin == Origin::Artificial;
        if fixed_at_zero {
            return (a.abs() > PIVOT_TOL).then_some(0.0);
        }
        (a > PIVOT_TOL).then(|| self.xb[i].max(0.0) / a)
    }

    fn pivot(&mut self, p: usize, q: usize, alpha: &[f64], step: f64) {
        let r = self.r;
        for i in 0..r {
            if i != p {
                self.xb[i] -= step * alpha[i];
            }
        }
        self.xb[p] = step;

        let ap = alpha[p];
        let (before, rest) = self.binv.split_at_mut(p * r);
        let (prow, after) = rest.split_at_mut(r);
        for v in prow.iter_mut() {
            *v /= ap;
        }
        for (i, row) in before.chunks_exact_mut(r).enumerate() {
            let a = alpha[i];
            if a != 0.0 {
                for (v, pv) in row.iter_mut().zip(prow.iter()) {
                    *v -= a * pv;
                }
            }
        }
        for (off, row) in after.chunks_exact_mut(r).enumerate() {
            let a = alpha[p + 1 + off];
            if a != 0.0 {
                for (v, pv) in row.iter_mut().zip(prow.iter()) {
                    *v -= a * pv;
                }
            }
        }

        let out = self.basis[p];
        self.basic_pos[out] = None;
        self.basis[p] = q;
        self.basic_pos[q] = Some(p);
    }

    /// Pivots zero-level artificials out of the basis where a structural column allows it.
    fn drive_out_artificials(&mut self) {
        let r = self.r;
        for p in 0..r {
            if self.cols[self.basis[p]].origin != Origin::Artificial {
                continue;
            }
            let row = &self.binv[p * r..(p + 1) * r];
            let mut best: Option<(usize, f64)> = None;
            for (k, col) in self.cols.iter().enumerate() {
                if self.basic_pos[k].is_some() || col.origin == Origin::Artificial {
                    continue;
                }
                let v: f64 = col.entries.iter().map(|&(i, a)| row[i] * a).sum();
                if v.abs() > PIVOT_TOL && best.is_none_or(|(_, bv)| v.abs() > bv.abs()) {
                    best = Some((k, v));
                }
            }
            if let Some((q, _)) = best {
                let alpha = self.ftran(q);
                let step = self.xb[p] / alpha[p];
                self.pivot(p, q, &alpha, step);
                self.iterations += 1;
            }
        }
    }

    /// Two rounds of iterative refinement of the basic solution.
    fn refine(&mut self) {
        let r = self.r;
        for _ in 0..2 {
            let mut res = self.b.clone();
            for (i, &k) in self.basis.iter().enumerate() {
                for &(row, a) in &self.cols[k].entries {
                    res[row] -= a * self.xb[i];
                }
            }
            for i in 0..r {
                let row = &self.binv[i * r..(i + 1) * r];
                self.xb[i] += row.iter().zip(&res).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
}
