//! Runtime scaling harness on synthetic heteroscedastic data.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::cjqr::{self, check_size, verify_noncrossing, JointOptions};
use crate::data::{Dataset, TauGrid};
use crate::error::{Error, Result};
use crate::lp::SolveOptions;
use crate::mqgd::{self, MqgdConfig};
use crate::qr::{self, residual_signs};

// y = INTERCEPT + SLOPE * sum_k x_k + (NOISE_BASE + NOISE_GROWTH * x_1) * eps,
// x_k ~ U[0, 10], eps ~ N(0, 1).
pub const SYNTH_INTERCEPT: f64 = 2.0;
pub const SYNTH_SLOPE: f64 = 0.3;
pub const SYNTH_NOISE_BASE: f64 = 0.2;
pub const SYNTH_NOISE_GROWTH: f64 = 0.1;

/// Deterministic synthetic dataset with an intercept column and `p - 1` covariates.
pub fn synth(n: usize, p: usize, seed: u64) -> Result<Dataset> {
    if p == 0 || n < p {
        return Err(Error::validation(format!(
            "synthetic data needs n >= p >= 1 (n = {n}, p = {p})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = p - 1;
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..10.0)).collect();
        let eps: f64 = rng.sample(StandardNormal);
        let spread = SYNTH_NOISE_BASE + SYNTH_NOISE_GROWTH * row.first().copied().unwrap_or(0.0);
        y.push(SYNTH_INTERCEPT + SYNTH_SLOPE * row.iter().sum::<f64>() + spread * eps);
        rows.push(row);
    }
    let names: Vec<String> = (1..=k).map(|i| format!("x{i}")).collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    Dataset::from_rows(&rows, y, &name_refs, true)
}

/// `q` evenly spaced levels `j / (q + 1)`.
pub fn even_taus(q: usize) -> Result<TauGrid> {
    TauGrid::new((1..=q).map(|j| j as f64 / (q + 1) as f64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMethod {
    Independent,
    Cjqr,
    Mqgd,
}

impl fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchMethod::Independent => "independent",
            BenchMethod::Cjqr => "cjqr",
            BenchMethod::Mqgd => "mqgd",
        })
    }
}

impl FromStr for BenchMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "independent" => Ok(BenchMethod::Independent),
            "cjqr" => Ok(BenchMethod::Cjqr),
            "mqgd" => Ok(BenchMethod::Mqgd),
            other => Err(Error::validation(format!("unknown bench method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchOptions {
    pub repeats: usize,
    pub seed: u64,
    /// Fixed iteration budget for MQGD cells (plateau stopping disabled).
    pub mqgd_iters: usize,
    pub joint: JointOptions,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            repeats: 3,
            seed: 7,
            mqgd_iters: 50,
            joint: JointOptions::default(),
        }
    }
}

impl Serialize for JointOptions {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("JointOptions", 2)?;
        st.serialize_field("max_nq", &self.max_nq)?;
        st.serialize_field("max_dense_bytes", &self.max_dense_bytes)?;
        st.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchCell {
    pub n: usize,
    pub q: usize,
    /// Median wall-clock seconds; for MQGD, per full-batch evaluation.
    pub median_seconds: f64,
    /// Total check loss of the fitted model.
    pub objective: f64,
    pub invariants_ok: bool,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Slope {
    /// The held-fixed size (q for slopes in n, n for slopes in q).
    pub fixed: usize,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingTable {
    pub method: BenchMethod,
    pub cells: Vec<BenchCell>,
    pub slopes_in_n: Vec<Slope>,
    pub slopes_in_q: Vec<Slope>,
}

impl ScalingTable {
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::Parse(e.to_string());
        w.write_record(["method", "n", "q", "median_seconds", "objective", "invariants_ok", "skipped"])
            .map_err(err)?;
        for c in &self.cells {
            w.write_record([
                self.method.to_string(),
                c.n.to_string(),
                c.q.to_string(),
                format!("{:.6e}", c.median_seconds),
                format!("{}", c.objective),
                c.invariants_ok.to_string(),
                c.skipped.clone().unwrap_or_default(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(())
    }
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

struct Outcome {
    seconds: f64,
    objective: f64,
    invariants_ok: bool,
}

fn run_once(method: BenchMethod, ds: &Dataset, taus: &TauGrid, opts: &BenchOptions) -> Result<Outcome> {
    let solver = SolveOptions::default();
    let start = Instant::now();
    match method {
        BenchMethod::Independent => {
            let model = qr::fit_independent(ds, taus, &solver)?;
            let seconds = start.elapsed().as_secs_f64();
            let n = ds.n() as f64;
            let ok = taus.as_slice().iter().enumerate().all(|(j, &t)| {
                let (neg, _, pos) = residual_signs(ds, &model.coef_row(j).to_vec(), 1e-9);
                neg as f64 <= n * t + 1e-9 && pos as f64 <= n * (1.0 - t) + 1e-9
            });
            Ok(Outcome {
                seconds,
                objective: model.fit_loss().iter().sum(),
                invariants_ok: ok,
            })
        }
        BenchMethod::Cjqr => {
            let fit = cjqr::fit_joint(ds, taus, &opts.joint)?;
            let seconds = start.elapsed().as_secs_f64();
            Ok(Outcome {
                seconds,
                objective: fit.objective,
                invariants_ok: verify_noncrossing(&fit.model, ds, 1e-9)?.is_clean(),
            })
        }
        BenchMethod::Mqgd => {
            let cfg = MqgdConfig {
                max_iters: opts.mqgd_iters,
                patience: 0,
                grad_tol: 0.0,
                seed: opts.seed,
                ..Default::default()
            };
            let (model, trace) = mqgd::fit(ds, taus, &cfg)?;
            let seconds = start.elapsed().as_secs_f64() / trace.evaluations as f64;
            Ok(Outcome {
                seconds,
                objective: model.fit_loss().iter().sum(),
                invariants_ok: trace.loss_history.windows(2).all(|w| w[1] <= w[0]),
            })
        }
    }
}

/// Times every `(n, q)` cell: one discarded warmup run, then the median of `repeats`.
/// Cells run sequentially. Guard violations become skipped cells.
pub fn scaling_run(
    method: BenchMethod,
    n_list: &[usize],
    q_list: &[usize],
    opts: &BenchOptions,
) -> Result<ScalingTable> {
    if opts.repeats == 0 {
        return Err(Error::validation("repeats must be at least 1"));
    }
    if method == BenchMethod::Mqgd && opts.mqgd_iters == 0 {
        return Err(Error::validation("mqgd_iters must be at least 1"));
    }
    let mut cells = Vec::new();
    for &n in n_list {
        let ds = synth(n, 2, opts.seed)?;
        for &q in q_list {
            let taus = even_taus(q)?;
            if method == BenchMethod::Cjqr {
                let guard = if q < 2 {
                    Err(Error::validation("joint fitting needs q >= 2"))
                } else {
                    check_size(n, q, &opts.joint)
                };
                if let Err(e) = guard {
                    cells.push(BenchCell {
                        n,
                        q,
                        median_seconds: f64::NAN,
                        objective: f64::NAN,
                        invariants_ok: true,
                        skipped: Some(e.to_string()),
                    });
                    continue;
                }
            }
            run_once(method, &ds, &taus, opts)?;
            let mut times = Vec::with_capacity(opts.repeats);
            let mut last = None;
            for _ in 0..opts.repeats {
                let out = run_once(method, &ds, &taus, opts)?;
                times.push(out.seconds);
                last = Some(out);
            }
            let last = last.expect("repeats >= 1");
            cells.push(BenchCell {
                n,
                q,
                median_seconds: median(times),
                objective: last.objective,
                invariants_ok: last.invariants_ok,
                skipped: None,
            });
        }
    }

    let timed = |c: &&BenchCell| c.skipped.is_none();
    let slopes_in_n = q_list
        .iter()
        .filter_map(|&q| {
            let pts: Vec<(f64, f64)> = cells
                .iter()
                .filter(timed)
                .filter(|c| c.q == q)
                .map(|c| (c.n as f64, c.median_seconds))
                .collect();
            log_log_slope(&pts).map(|slope| Slope { fixed: q, slope })
        })
        .collect();
    let slopes_in_q = n_list
        .iter()
        .filter_map(|&n| {
            let pts: Vec<(f64, f64)> = cells
                .iter()
                .filter(timed)
                .filter(|c| c.n == n)
                .map(|c| (c.q as f64, c.median_seconds))
                .collect();
            log_log_slope(&pts).map(|slope| Slope { fixed: n, slope })
        })
        .collect();
    Ok(ScalingTable {
        method,
        cells,
        slopes_in_n,
        slopes_in_q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_is_reproducible() {
        let a = synth(20, 2, 1).unwrap();
        let b = synth(20, 2, 1).unwrap();
        assert_eq!(a, b);
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        a.write_csv(&mut ba).unwrap();
        b.write_csv(&mut bb).unwrap();
        assert_eq!(ba, bb);
        assert_ne!(a, synth(20, 2, 2).unwrap());
        assert_eq!(synth(1000, 2, 7).unwrap().n(), 1000);
        assert!(a.x().column(1).iter().all(|x| (0.0..10.0).contains(x)));
        assert!(synth(1, 2, 0).is_err());
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0].iter().map(|&x| (x, 3.0 * x * x)).collect();
        assert!((log_log_slope(&pts).unwrap() - 2.0).abs() < 1e-12);
        assert!(log_log_slope(&[(1.0, 1.0)]).is_none());
    }

    #[test]
    fn small_scaling_tables() {
        let opts = BenchOptions {
            repeats: 1,
            mqgd_iters: 5,
            ..Default::default()
        };
        for method in [BenchMethod::Independent, BenchMethod::Cjqr, BenchMethod::Mqgd] {
            let t = scaling_run(method, &[30, 60], &[2, 3], &opts).unwrap();
            assert_eq!(t.cells.len(), 4);
            assert!(t.cells.iter().all(|c| c.invariants_ok && c.skipped.is_none()));
            assert_eq!(t.slopes_in_n.len(), 2);
            assert_eq!(t.slopes_in_q.len(), 2);
        }
    }

    #[test]
    fn guarded_cells_are_skipped() {
        let opts = BenchOptions {
            repeats: 1,
            joint: JointOptions {
                max_nq: 100,
                ..Default::default()
            },
            ..Default::default()
        };
        let t = scaling_run(BenchMethod::Cjqr, &[40], &[2, 3], &opts).unwrap();
        assert!(t.cells[0].skipped.is_none());
        assert!(t.cells[1].skipped.is_some());
    }
}
