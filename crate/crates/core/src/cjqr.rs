//! Constrained joint quantile regression: all levels in one LP, with the fitted
//! values ordered across adjacent levels at every training row.

use std::time::Instant;

use ndarray::{Array2, ArrayView1};
use serde::Serialize;

use crate::data::{Dataset, TauGrid};
use crate::error::{Error, Result};
use crate::lp::{self, LinearProgram, LowerBound, LpStatus, SolveOptions};
use crate::model::{Method, QuantileFunction, QuantileModel};
use crate::qr::objective_unchecked;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JointOptions {
    pub solver: SolveOptions,
    /// Cap on `n * q`.
    pub max_nq: usize,
    /// Cap on the dense basis-inverse footprint, `8 r^2` bytes for `r` LP rows.
    pub max_dense_bytes: usize,
}

impl Default for JointOptions {
    fn default() -> Self {
        JointOptions {
            solver: SolveOptions::default(),
            max_nq: 200_000,
            max_dense_bytes: 1 << 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointLpStats {
    /// `q p` coefficients plus `2 n q` residual parts.
    pub n_vars: usize,
    pub n_eq: usize,
    pub n_ineq: usize,
    pub iterations: usize,
    #[serde(skip)]
    pub solve_time: f64,
}

impl JointLpStats {
    fn for_shape(n: usize, p: usize, q: usize) -> Self {
        JointLpStats {
            n_vars: q * p + 2 * n * q,
            n_eq: n * q,
            n_ineq: n * (q - 1),
            iterations: 0,
            solve_time: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct JointFit {
    pub model: QuantileModel,
    pub stats: JointLpStats,
    /// Total check loss over all levels.
    pub objective: f64,
}

/// Builds the joint LP. Variable layout: `beta` (q blocks of p, free), `u+` and `u-`
/// (q blocks of n each), then one slack per non-crossing row. Rows `j n + i` are the
/// residual equations; rows `n q + j n + i` are `x_i'(beta_j - beta_{j+1}) + s = 0`.
pub fn joint_lp(ds: &Dataset, taus: &TauGrid) -> LinearProgram {
    let (n, p, q) = (ds.n(), ds.p(), taus.len());
    let eq_rows = n * q;
    let mut b = ds.y().to_vec().repeat(q);
    b.resize(eq_rows + n * (q - 1), 0.0);
    let mut lp = LinearProgram::new(b);
    let x = ds.x();
    for j in 0..q {
        for k in 0..p {
            let mut col = Vec::with_capacity(3 * n);
            for i in 0..n {
                let v = x[[i, k]];
                col.push((j * n + i, v));
                if j + 1 < q {
                    col.push((eq_rows + j * n + i, v));
                }
                if j > 0 {
                    col.push((eq_rows + (j - 1) * n + i, -v));
                }
            }
            lp.add_variable(0.0, LowerBound::Free, &col);
        }
    }
    for (j, &tau) in taus.as_slice().iter().enumerate() {
        for i in 0..n {
            lp.add_variable(tau, LowerBound::Zero, &[(j * n + i, 1.0)]);
        }
    }
    for (j, &tau) in taus.as_slice().iter().enumerate() {
        for i in 0..n {
            lp.add_variable(1.0 - tau, LowerBound::Zero, &[(j * n + i, -1.0)]);
        }
    }
    for row in eq_rows..eq_rows + n * (q - 1) {
        lp.add_variable(0.0, LowerBound::Zero, &[(row, 1.0)]);
    }
    lp
}

pub fn check_size(n: usize, q: usize, opts: &JointOptions) -> Result<()> {
    if n * q > opts.max_nq {
        return Err(Error::Guard(format!(
            "joint LP with n q = {} exceeds the cap of {}",
            n * q,
            opts.max_nq
        )));
    }
    let rows = n * q + n * (q - 1);
    let bytes = 8u128 * (rows as u128) * (rows as u128);
    if bytes > opts.max_dense_bytes as u128 {
        return Err(Error::Guard(format!(
            "joint LP with {rows} rows needs about {} MiB of basis storage (cap {} MiB)",
            bytes >> 20,
            opts.max_dense_bytes >> 20
        )));
    }
    Ok(())
}

pub fn fit_joint(ds: &Dataset, taus: &TauGrid, opts: &JointOptions) -> Result<JointFit> {
    let (n, p, q) = (ds.n(), ds.p(), taus.len());
    if q < 2 {
        return Err(Error::validation("joint fitting needs at least two quantile levels"));
    }
    check_size(n, q, opts)?;
    let mut stats = JointLpStats::for_shape(n, p, q);
    let lp = joint_lp(ds, taus);
    let start = Instant::now();
    let sol = lp::solve(&lp, &opts.solver)?;
    stats.solve_time = start.elapsed().as_secs_f64();
    stats.iterations = sol.iterations;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Solver {
            tau: taus.first(),
            status: sol.status,
        });
    }
    let coef = Array2::from_shape_vec((q, p), sol.x[..q * p].to_vec())
        .map_err(|e| Error::dimension(e.to_string()))?;
    let losses: Vec<f64> = (0..q)
        .map(|j| objective_unchecked(ds, coef.row(j), taus[j]))
        .collect();
    let objective = losses.iter().sum();
    let model = QuantileModel::new(coef, taus.clone(), Method::CJQR, losses)?;
    Ok(JointFit {
        model,
        stats,
        objective,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViolationReport {
    pub count: usize,
    pub max_magnitude: f64,
    /// `(row, j)` of the largest `Q_j(x_row) - Q_{j+1}(x_row)`.
    pub worst: Option<(usize, usize)>,
}

impl ViolationReport {
    pub fn is_clean(&self) -> bool {
        self.count == 0
    }
}

/// Counts `(i, j)` with `Q_j(x_i) > Q_{j+1}(x_i) + tol` over every training row.
pub fn verify_noncrossing(model: &impl QuantileFunction, ds: &Dataset, tol: f64) -> Result<ViolationReport> {
    if model.n_features() != ds.p() {
        return Err(Error::dimension(format!(
            "model expects {} features, dataset has {}",
            model.n_features(),
            ds.p()
        )));
    }
    let mut report = ViolationReport {
        count: 0,
        max_magnitude: 0.0,
        worst: None,
    };
    for (i, x) in ds.x().rows().into_iter().enumerate() {
        let v = model.quantiles_at(x);
        for (j, w) in v.windows(2).enumerate() {
            let gap = w[0] - w[1];
            if gap > tol {
                report.count += 1;
                if gap > report.max_magnitude {
                    report.max_magnitude = gap;
                    report.worst = Some((i, j));
                }
            }
        }
    }
    Ok(report)
}

/// Joint objective of an arbitrary coefficient matrix (used for sandwich bounds).
pub fn joint_objective(ds: &Dataset, taus: &TauGrid, coef: &Array2<f64>) -> f64 {
    (0..taus.len())
        .map(|j| objective_unchecked(ds, ArrayView1::from(coef.row(j)), taus[j]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::example_table;
    use crate::qr::{fit_independent, fit_single};

    fn grid(t: &[f64]) -> TauGrid {
        TauGrid::new(t.to_vec()).unwrap()
    }

    #[test]
    fn stats_follow_shape_formulas() {
        let ds = example_table();
        let fit = fit_joint(&ds, &grid(&[0.1, 0.15]), &JointOptions::default()).unwrap();
        assert_eq!(fit.stats.n_vars, 2 * 2 + 2 * 20 * 2);
        assert_eq!(fit.stats.n_eq, 40);
        assert_eq!(fit.stats.n_ineq, 20);
        let lp = joint_lp(&ds, &grid(&[0.1, 0.15]));
        assert_eq!(lp.n_rows(), fit.stats.n_eq + fit.stats.n_ineq);
        assert_eq!(lp.n_vars(), fit.stats.n_vars + fit.stats.n_ineq);
    }

    #[test]
    fn example_joint_fit_is_feasible_and_sandwiched() {
        let ds = example_table();
        let taus = grid(&[0.1, 0.15]);
        let fit = fit_joint(&ds, &taus, &JointOptions::default()).unwrap();
        assert_eq!(fit.model.method(), Method::CJQR);
        assert!(verify_noncrossing(&fit.model, &ds, 1e-9).unwrap().is_clean());
        let indep = fit_independent(&ds, &taus, &SolveOptions::default()).unwrap();
        let floor: f64 = indep.fit_loss().iter().sum();
        assert!(fit.objective >= floor - 1e-9);
        // Reference value from an independent LP solver (HiGHS) on the same instance.
        assert!((fit.objective - 6.724_245_795_068_611).abs() < 1e-8, "{}", fit.objective);
        let median = fit_single(&ds, 0.5, &SolveOptions::default()).unwrap();
        let both_median = Array2::from_shape_fn((2, 2), |(_, k)| median.beta[k]);
        assert!(fit.objective <= joint_objective(&ds, &taus, &both_median) + 1e-9);
    }

    #[test]
    fn equals_independent_when_already_ordered() {
        // Noise-free fan: y = x * c for a spread of multipliers, so independent lines are
        // rays through the origin ordered by tau.
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for x in 1..=10 {
            for c in [0.5, 1.0, 1.5, 2.0, 2.5] {
                rows.push(vec![x as f64]);
                y.push(x as f64 * c);
            }
        }
        let ds = Dataset::from_rows(&rows, y, &["x"], true).unwrap();
        let taus = grid(&[0.2, 0.5, 0.8]);
        let indep = fit_independent(&ds, &taus, &SolveOptions::default()).unwrap();
        assert!(verify_noncrossing(&indep, &ds, 0.0).unwrap().is_clean(), "precondition");
        let joint = fit_joint(&ds, &taus, &JointOptions::default()).unwrap();
        let sum: f64 = indep.fit_loss().iter().sum();
        assert!((joint.objective - sum).abs() < 1e-8, "{} vs {sum}", joint.objective);
    }

    #[test]
    fn tiny_dataset_bound() {
        let ds = Dataset::from_rows(&[vec![0.0], vec![1.0], vec![2.0]], vec![0.0, 3.0, 1.0], &["x"], true).unwrap();
        let taus = grid(&[0.3, 0.6]);
        let joint = fit_joint(&ds, &taus, &JointOptions::default()).unwrap();
        let sep: f64 = taus
            .as_slice()
            .iter()
            .map(|&t| fit_single(&ds, t, &SolveOptions::default()).unwrap().objective)
            .sum();
        assert!(joint.objective >= sep - 1e-12);
    }

    #[test]
    fn independent_reference_model_crosses_at_small_x() {
        let ds = example_table();
        let taus = grid(&[0.1, 0.15]);
        let published = QuantileModel::new(
            ndarray::array![[2.1010, -0.0789], [1.6796, 0.0453]],
            taus.clone(),
            Method::IndependentQR,
            vec![0.0; 2],
        )
        .unwrap();
        let rep = verify_noncrossing(&published, &ds, 1e-9).unwrap();
        assert!(rep.count >= 1);
        // 2.1010 - 0.0789 * 0.2095 > 1.6796 + 0.0453 * 0.2095
        assert_eq!(rep.worst, Some((0, 0)));
        let fitted = fit_independent(&ds, &taus, &SolveOptions::default()).unwrap();
        assert!(verify_noncrossing(&fitted, &ds, 1e-9).unwrap().count >= 1);
    }

    #[test]
    fn single_level_is_vacuously_clean() {
        let ds = example_table();
        let m = fit_independent(&ds, &grid(&[0.5]), &SolveOptions::default()).unwrap();
        assert!(verify_noncrossing(&m, &ds, 1e-9).unwrap().is_clean());
        assert!(fit_joint(&ds, &grid(&[0.5]), &JointOptions::default()).is_err());
    }

    #[test]
    fn guard_rejects_large_instances() {
        let opts = JointOptions {
            max_nq: 30,
            ..Default::default()
        };
        let err = fit_joint(&example_table(), &grid(&[0.1, 0.15]), &opts).unwrap_err();
        assert!(matches!(err, Error::Guard(_)));
        assert!(check_size(2000, 50, &JointOptions::default()).is_err());
    }
}
