//! Single-level and independent multi-level linear quantile regression.

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;

use crate::data::{check_tau, Dataset, TauGrid};
use crate::error::{Error, Result};
use crate::lp::{self, LinearProgram, LowerBound, LpStatus, SolveOptions};
use crate::model::{Method, QuantileFunction, QuantileModel, QuantileSheet};

/// Check loss `u (tau - 1{u < 0})`.
pub fn pinball(u: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(rho(u, tau))
}

#[inline]
pub(crate) fn rho(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// `sum_i rho_tau(y_i - x_i' beta)`.
pub fn objective(ds: &Dataset, beta: &[f64], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if beta.len() != ds.p() {
        return Err(Error::dimension(format!(
            "beta has {} entries, dataset has {} columns",
            beta.len(),
            ds.p()
        )));
    }
    Ok(objective_unchecked(ds, ArrayView1::from(beta), tau))
}

pub(crate) fn objective_unchecked(ds: &Dataset, beta: ArrayView1<'_, f64>, tau: f64) -> f64 {
    ds.x()
        .rows()
        .into_iter()
        .zip(ds.y())
        .map(|(x, y)| rho(y - x.dot(&beta), tau))
        .sum()
}

/// Counts of residuals `y - x'beta` below `-tol`, within `tol` of zero, and above `tol`.
pub fn residual_signs(ds: &Dataset, beta: &[f64], tol: f64) -> (usize, usize, usize) {
    let beta = ArrayView1::from(beta);
    let mut counts = (0, 0, 0);
    for (x, y) in ds.x().rows().into_iter().zip(ds.y()) {
        let r = y - x.dot(&beta);
        if r < -tol {
            counts.0 += 1;
        } else if r > tol {
            counts.2 += 1;
        } else {
            counts.1 += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
pub struct QrFit {
    pub beta: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// LP with free `beta` (p columns) followed by `u+` (cost tau) and `u-` (cost 1 - tau) per row:
/// `x_i' beta + u+_i - u-_i = y_i`.
pub fn single_tau_lp(ds: &Dataset, tau: f64) -> LinearProgram {
    let n = ds.n();
    let mut lp = LinearProgram::new(ds.y().to_vec());
    for k in 0..ds.p() {
        let col: Vec<(usize, f64)> = ds.x().column(k).iter().copied().enumerate().collect();
        lp.add_variable(0.0, LowerBound::Free, &col);
    }
    for i in 0..n {
        lp.add_variable(tau, LowerBound::Zero, &[(i, 1.0)]);
    }
    for i in 0..n {
        lp.add_variable(1.0 - tau, LowerBound::Zero, &[(i, -1.0)]);
    }
    lp
}

pub fn fit_single(ds: &Dataset, tau: f64, opts: &SolveOptions) -> Result<QrFit> {
    check_tau(tau)?;
    let lp = single_tau_lp(ds, tau);
    let sol = lp::solve(&lp, opts)?;
    match sol.status {
        LpStatus::Optimal => {}
        status => return Err(Error::Solver { tau, status }),
    }
    let beta = sol.x[..ds.p()].to_vec();
    let objective = objective_unchecked(ds, ArrayView1::from(&beta[..]), tau);
    Ok(QrFit {
        beta,
        objective,
        iterations: sol.iterations,
    })
}

/// One uncoupled fit per level. Fits run in parallel; each is a pure function of its inputs
/// so the result does not depend on scheduling.
pub fn fit_independent(ds: &Dataset, taus: &TauGrid, opts: &SolveOptions) -> Result<QuantileModel> {
    let fits: Vec<QrFit> = taus
        .as_slice()
        .par_iter()
        .map(|&t| fit_single(ds, t, opts))
        .collect::<Result<_>>()?;
    let mut coef = Array2::zeros((taus.len(), ds.p()));
    for (j, f) in fits.iter().enumerate() {
        coef.row_mut(j).assign(&ArrayView1::from(&f.beta[..]));
    }
    let losses = fits.iter().map(|f| f.objective).collect();
    QuantileModel::new(coef, taus.clone(), Method::IndependentQR, losses)
}

pub fn predict(model: &impl QuantileFunction, x_star: &[f64]) -> Result<QuantileSheet> {
    model.predict(x_star)
}

pub const ORACLE_MAX_P: usize = 3;
pub const ORACLE_MAX_N: usize = 200;

/// Exhaustive search over hyperplanes through `p` observations.
///
/// Some optimal quantile fit always interpolates at least `p` observations, so the best
/// of these candidates is a global optimum. Ties are broken by the lexicographically
/// smallest coefficient vector.
pub fn brute_force_oracle(ds: &Dataset, tau: f64) -> Result<QrFit> {
    check_tau(tau)?;
    let (n, p) = (ds.n(), ds.p());
    if p > ORACLE_MAX_P || n > ORACLE_MAX_N {
        return Err(Error::Guard(format!(
            "oracle limited to p <= {ORACLE_MAX_P} and n <= {ORACLE_MAX_N} (got n = {n}, p = {p})"
        )));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut count = 0usize;
    let mut idx: Vec<usize> = (0..p).collect();
    loop {
        if let Some(beta) = interpolate(ds, &idx) {
            count += 1;
            let obj = objective_unchecked(ds, ArrayView1::from(&beta[..]), tau);
            let replace = match &best {
                None => true,
                Some((b, bb)) => {
                    let tie = (obj - b).abs() <= 1e-12 * (1.0 + b.abs());
                    if tie {
                        lex_less(&beta, bb)
                    } else {
                        obj < *b
                    }
                }
            };
            if replace {
                best = Some((obj, beta));
            }
        }
        if !next_combination(&mut idx, n) {
            break;
        }
    }
    let (objective, beta) = best.ok_or_else(|| {
        Error::validation("no subset of observations determines a unique hyperplane")
    })?;
    Ok(QrFit {
        beta,
        objective,
        iterations: count,
    })
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Solves `X_S beta = y_S` by Gaussian elimination with partial pivoting; `None` if singular.
fn interpolate(ds: &Dataset, rows: &[usize]) -> Option<Vec<f64>> {
    let p = rows.len();
    let mut a: Vec<Vec<f64>> = rows
        .iter()
        .map(|&i| {
            let mut r = ds.row(i).to_vec();
            r.push(ds.y()[i]);
            r
        })
        .collect();
    let scale = a
        .iter()
        .flat_map(|r| r[..p].iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    for c in 0..p {
        let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(c, piv);
        for i in c + 1..p {
            let f = a[i][c] / a[c][c];
            if f != 0.0 {
                for k in c..=p {
                    a[i][k] -= f * a[c][k];
                }
            }
        }
    }
    let mut beta = vec![0.0; p];
    for c in (0..p).rev() {
        let s: f64 = (c + 1..p).map(|k| a[c][k] * beta[k]).sum();
        beta[c] = (a[c][p] - s) / a[c][c];
    }
    Some(beta)
}
