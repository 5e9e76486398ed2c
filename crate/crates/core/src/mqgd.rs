//! Gradient-trained multi-output quantile regression on the composite check loss.
//!
//! The default model is linear (`hidden_units = 0`): one coefficient vector per level,
//! trained jointly by full-batch L-BFGS with a monotone backtracking line search and
//! stopped when the training loss plateaus. With `hidden_units > 0` the heads share a
//! single softplus hidden layer.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TauGrid};
use crate::error::{Error, Result};
use crate::lp::SolveOptions;
use crate::model::{Method, QuantileFunction, QuantileModel};
use crate::qr::{fit_single, rho};

/// Per-point tolerance when counting quantile crossings.
pub const CROSSING_TOL: f64 = 1e-9;

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;
const CURVATURE_EPS: f64 = 1e-10;

// First-order schedule: linear warmup over the first 30% of iterations from 10% of
// peak to peak (peak = 10 x learning_rate), then cosine decay to 0.1% of peak.
const WARMUP_FRACTION: f64 = 0.3;
const PEAK_MULTIPLIER: f64 = 10.0;
const WARMUP_START: f64 = 0.1;
const FINAL_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    QuasiNewton,
    FirstOrderWithSchedule,
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "quasi_newton" | "lbfgs" => Ok(Optimizer::QuasiNewton),
            "first_order_with_schedule" | "first_order" | "adam" => Ok(Optimizer::FirstOrderWithSchedule),
            other => Err(Error::validation(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MqgdConfig {
    pub hidden_units: usize,
    pub max_iters: usize,
    /// Iterations without `min_improvement` before stopping; 0 disables the check.
    pub patience: usize,
    pub min_improvement: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Base step size for the first-order optimizer.
    pub learning_rate: f64,
    /// L-BFGS memory length.
    pub history: usize,
    /// Stop once the largest subgradient component falls to this value.
    pub grad_tol: f64,
}

impl Default for MqgdConfig {
    fn default() -> Self {
        MqgdConfig {
            hidden_units: 0,
            max_iters: 10_000,
            patience: 500,
            min_improvement: 1e-8,
            seed: 42,
            optimizer: Optimizer::QuasiNewton,
            learning_rate: 0.01,
            history: 100,
            grad_tol: 1e-7,
        }
    }
}

impl MqgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience >= self.max_iters {
            return Err(Error::validation(format!(
                "patience ({}) must be smaller than max_iters ({})",
                self.patience, self.max_iters
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate must be positive"));
        }
        if self.history == 0 {
            return Err(Error::validation("history must be at least 1"));
        }
        if !(self.min_improvement >= 0.0) {
            return Err(Error::validation("min_improvement must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Plateau,
    MaxIters,
    GradientTolerance,
    Diverged,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StopReason::Plateau => "plateau",
            StopReason::MaxIters => "max_iters",
            StopReason::GradientTolerance => "gradient_tolerance",
            StopReason::Diverged => "diverged",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingTrace {
    /// Loss at the initial parameters, then after every iteration.
    pub loss_history: Vec<f64>,
    pub stopped_at: usize,
    pub stop_reason: StopReason,
    /// Full-batch loss/gradient evaluations, line-search trials included.
    pub evaluations: usize,
}

impl TrainingTrace {
    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().expect("trace is never empty")
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::Parse(e.to_string());
        w.write_record(["iteration", "loss"]).map_err(err)?;
        for (i, l) in self.loss_history.iter().enumerate() {
            w.write_record([i.to_string(), format!("{l}")]).map_err(err)?;
        }
        w.flush().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(())
    }
}

/// Multi-output network. Parameter layout:
/// linear: `W` (q x p, row-major);
/// hidden: `V` (h x p), `c` (h), `W` (q x h), `b` (q).
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    p: usize,
    hidden: usize,
    taus: TauGrid,
    params: Vec<f64>,
}

impl Network {
    pub fn n_params(p: usize, q: usize, hidden: usize) -> usize {
        if hidden == 0 {
            q * p
        } else {
            hidden * p + hidden + q * hidden + q
        }
    }

    pub fn from_params(p: usize, hidden: usize, taus: TauGrid, params: Vec<f64>) -> Result<Self> {
        let want = Self::n_params(p, taus.len(), hidden);
        if params.len() != want {
            return Err(Error::dimension(format!(
                "{} parameters given, network needs {want}",
                params.len()
            )));
        }
        Ok(Network {
            p,
            hidden,
            taus,
            params,
        })
    }

    pub fn linear(model: &QuantileModel) -> Self {
        Network {
            p: model.p(),
            hidden: 0,
            taus: model.taus().clone(),
            params: model.coef().iter().copied().collect(),
        }
    }

    /// Seeded uniform initialization on `+-1/sqrt(fan_in)` per layer.
    pub fn init(p: usize, hidden: usize, taus: TauGrid, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = taus.len();
        let mut params = Vec::with_capacity(Self::n_params(p, q, hidden));
        let mut draw = |count: usize, fan_in: usize, out: &mut Vec<f64>| {
            let a = 1.0 / (fan_in as f64).sqrt();
            out.extend((0..count).map(|_| rng.random_range(-a..a)));
        };
        if hidden == 0 {
            draw(q * p, p, &mut params);
        } else {
            draw(hidden * p + hidden, p, &mut params);
            draw(q * hidden + q, hidden, &mut params);
        }
        Network {
            p,
            hidden,
            taus,
            params,
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn hidden_units(&self) -> usize {
        self.hidden
    }

    pub fn q(&self) -> usize {
        self.taus.len()
    }

    /// Coefficient matrix for linear networks.
    pub fn to_quantile_model(&self, fit_loss: Vec<f64>) -> Result<QuantileModel> {
        if self.hidden != 0 {
            return Err(Error::validation(
                "only linear networks (hidden_units = 0) convert to a coefficient model",
            ));
        }
        let coef = Array2::from_shape_vec((self.q(), self.p), self.params.clone())
            .map_err(|e| Error::dimension(e.to_string()))?;
        QuantileModel::new(coef, self.taus.clone(), Method::MQGD, fit_loss)
    }

    fn check_data(&self, ds: &Dataset) -> Result<()> {
        if ds.p() != self.p {
            return Err(Error::dimension(format!(
                "network expects {} features, dataset has {}",
                self.p,
                ds.p()
            )));
        }
        Ok(())
    }

    fn forward_with(&self, params: &[f64], x: ArrayView1<'_, f64>, hidden_out: &mut [f64], out: &mut [f64]) {
        let (p, q, h) = (self.p, self.q(), self.hidden);
        if h == 0 {
            for (j, o) in out.iter_mut().enumerate() {
                *o = dot(&params[j * p..(j + 1) * p], x);
            }
            return;
        }
        let (v, rest) = params.split_at(h * p);
        let (c, rest) = rest.split_at(h);
        let (w, b) = rest.split_at(q * h);
        for k in 0..h {
            hidden_out[k] = softplus(dot(&v[k * p..(k + 1) * p], x) + c[k]);
        }
        for j in 0..q {
            out[j] = b[j]
                + w[j * h..(j + 1) * h]
                    .iter()
                    .zip(hidden_out.iter())
                    .map(|(a, z)| a * z)
                    .sum::<f64>();
        }
    }

    /// Composite loss and a subgradient at `params`. Rows are accumulated in order.
    fn loss_grad(&self, params: &[f64], ds: &Dataset, grad: Option<&mut [f64]>) -> f64 {
        let (p, q, h) = (self.p, self.q(), self.hidden);
        let n = ds.n() as f64;
        let taus = self.taus.as_slice();
        let mut hid = vec![0.0; h];
        let mut out = vec![0.0; q];
        let mut dout = vec![0.0; q];
        let mut loss = 0.0;
        let mut grad = grad;
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        for (x, &y) in ds.x().rows().into_iter().zip(ds.y()) {
            self.forward_with(params, x, &mut hid, &mut out);
            let mut row_loss = 0.0;
            for j in 0..q {
                let r = y - out[j];
                row_loss += rho(r, taus[j]);
                // d rho / d f = -(tau - 1{r < 0}); slope tau at r = 0.
                let ind = if r < 0.0 { 1.0 } else { 0.0 };
                dout[j] = -(taus[j] - ind) / n;
            }
            loss += row_loss;
            let Some(g) = grad.as_deref_mut() else {
                continue;
            };
            if h == 0 {
                for j in 0..q {
                    let gj = &mut g[j * p..(j + 1) * p];
                    for (gv, xv) in gj.iter_mut().zip(x.iter()) {
                        *gv += dout[j] * xv;
                    }
                }
                continue;
            }
            let (gv, rest) = g.split_at_mut(h * p);
            let (gc, rest) = rest.split_at_mut(h);
            let (gw, gb) = rest.split_at_mut(q * h);
            let w = &params[h * p + h..h * p + h + q * h];
            let v = &params[..h * p];
            let c = &params[h * p..h * p + h];
            for j in 0..q {
                gb[j] += dout[j];
                for k in 0..h {
                    gw[j * h + k] += dout[j] * hid[k];
                }
            }
            for k in 0..h {
                let dh: f64 = (0..q).map(|j| dout[j] * w[j * h + k]).sum();
                let pre = dot(&v[k * p..(k + 1) * p], x) + c[k];
                let da = dh * sigmoid(pre);
                gc[k] += da;
                for (l, xv) in x.iter().enumerate() {
                    gv[k * p + l] += da * xv;
                }
            }
        }
        loss / n
    }
}

impl QuantileFunction for Network {
    fn taus(&self) -> &TauGrid {
        &self.taus
    }

    fn n_features(&self) -> usize {
        self.p
    }

    fn quantiles_at(&self, x: ArrayView1<'_, f64>) -> Vec<f64> {
        let mut hid = vec![0.0; self.hidden];
        let mut out = vec![0.0; self.q()];
        self.forward_with(&self.params, x, &mut hid, &mut out);
        out
    }
}

fn dot(a: &[f64], x: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(x.iter()).map(|(u, v)| u * v).sum()
}

fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// `(1/n) sum_i sum_j rho_{tau_j}(y_i - f_j(x_i))`.
pub fn composite_loss(net: &Network, ds: &Dataset) -> Result<f64> {
    net.check_data(ds)?;
    Ok(net.loss_grad(&net.params, ds, None))
}

/// Subgradient of [`composite_loss`] in the network's parameter layout.
pub fn subgradient(net: &Network, ds: &Dataset) -> Result<Vec<f64>> {
    net.check_data(ds)?;
    let mut g = vec![0.0; net.params.len()];
    net.loss_grad(&net.params, ds, Some(&mut g));
    Ok(g)
}

/// Sum of per-level LP optima divided by `n`: no joint model can do better.
pub fn separable_floor(ds: &Dataset, taus: &TauGrid, opts: &SolveOptions) -> Result<f64> {
    let mut total = 0.0;
    for &t in taus.as_slice() {
        total += fit_single(ds, t, opts)?.objective;
    }
    Ok(total / ds.n() as f64)
}

/// Trains a linear multi-output model and returns it as a coefficient model.
pub fn fit(ds: &Dataset, taus: &TauGrid, config: &MqgdConfig) -> Result<(QuantileModel, TrainingTrace)> {
    if config.hidden_units != 0 {
        return Err(Error::validation(
            "fit returns a coefficient model; use fit_network for hidden_units > 0",
        ));
    }
    let (net, trace) = fit_network(ds, taus, config)?;
    let losses = (0..taus.len())
        .map(|j| {
            let beta = &net.params[j * net.p..(j + 1) * net.p];
            crate::qr::objective_unchecked(ds, ArrayView1::from(beta), taus[j])
        })
        .collect();
    Ok((net.to_quantile_model(losses)?, trace))
}

pub fn fit_network(ds: &Dataset, taus: &TauGrid, config: &MqgdConfig) -> Result<(Network, TrainingTrace)> {
    config.validate()?;
    let mut net = Network::init(ds.p(), config.hidden_units, taus.clone(), config.seed);
    let trace = match config.optimizer {
        Optimizer::QuasiNewton => train_lbfgs(&mut net, ds, config),
        Optimizer::FirstOrderWithSchedule => train_adam(&mut net, ds, config),
    };
    if trace.stop_reason == StopReason::Diverged {
        return Err(Error::Training {
            trace: Box::new(trace),
        });
    }
    Ok((net, trace))
}

struct Plateau {
    best: f64,
    stale: usize,
    patience: usize,
    min_improvement: f64,
}

impl Plateau {
    fn new(initial: f64, config: &MqgdConfig) -> Self {
        Plateau {
            best: initial,
            stale: 0,
            patience: config.patience,
            min_improvement: config.min_improvement,
        }
    }

    /// Records a loss; true once `patience` iterations passed without enough improvement.
    /// A patience of zero never stops.
    fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best - self.min_improvement {
            self.best = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.patience > 0 && self.stale >= self.patience
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn vdot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn train_lbfgs(net: &mut Network, ds: &Dataset, config: &MqgdConfig) -> TrainingTrace {
    let dim = net.params.len();
    let mut w = net.params.clone();
    let mut g = vec![0.0; dim];
    let mut f = net.loss_grad(&w, ds, Some(&mut g));
    let mut trace = TrainingTrace {
        loss_history: vec![f],
        stopped_at: 0,
        stop_reason: StopReason::MaxIters,
        evaluations: 1,
    };
    if !f.is_finite() {
        trace.stop_reason = StopReason::Diverged;
        return trace;
    }
    let mut plateau = Plateau::new(f, config);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut trial = vec![0.0; dim];
    let mut g_trial = vec![0.0; dim];

    for it in 1..=config.max_iters {
        if inf_norm(&g) <= config.grad_tol {
            trace.stopped_at = it - 1;
            trace.stop_reason = StopReason::GradientTolerance;
            net.params = w;
            return trace;
        }

        let mut d = two_loop(&g, &s_hist, &y_hist);
        let mut slope = vdot(&g, &d);
        if !(slope < 0.0) {
            s_hist.clear();
            y_hist.clear();
            d = g.iter().map(|v| -v).collect();
            slope = vdot(&g, &d);
        }
        let mut t = if s_hist.is_empty() {
            (1.0 / g.iter().map(|v| v.abs()).sum::<f64>()).min(1.0)
        } else {
            1.0
        };

        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            for k in 0..dim {
                trial[k] = w[k] + t * d[k];
            }
            let ft = net.loss_grad(&trial, ds, Some(&mut g_trial));
            trace.evaluations += 1;
            if ft.is_finite() && ft <= f + ARMIJO_C1 * t * slope {
                let s: Vec<f64> = (0..dim).map(|k| trial[k] - w[k]).collect();
                let y: Vec<f64> = (0..dim).map(|k| g_trial[k] - g[k]).collect();
                if vdot(&s, &y) > CURVATURE_EPS * vdot(&y, &y).sqrt() * vdot(&s, &s).sqrt() {
                    if s_hist.len() == config.history {
                        s_hist.remove(0);
                        y_hist.remove(0);
                    }
                    s_hist.push(s);
                    y_hist.push(y);
                }
                std::mem::swap(&mut w, &mut trial);
                std::mem::swap(&mut g, &mut g_trial);
                f = ft;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // Step rejected: keep the iterate, restart from steepest descent.
            s_hist.clear();
            y_hist.clear();
        }

        trace.loss_history.push(f);
        trace.stopped_at = it;
        if !f.is_finite() {
            trace.stop_reason = StopReason::Diverged;
            net.params = w;
            return trace;
        }
        if plateau.observe(f) {
            trace.stop_reason = StopReason::Plateau;
            net.params = w;
            return trace;
        }
    }
    trace.stop_reason = StopReason::MaxIters;
    net.params = w;
    trace
}

/// L-BFGS two-loop recursion: returns `-H g`.
fn two_loop(g: &[f64], s_hist: &[Vec<f64>], y_hist: &[Vec<f64>]) -> Vec<f64> {
    let mut q = g.to_vec();
    let m = s_hist.len();
    let mut alpha = vec![0.0; m];
    let mut rho_k = vec![0.0; m];
    for i in (0..m).rev() {
        rho_k[i] = 1.0 / vdot(&y_hist[i], &s_hist[i]);
        alpha[i] = rho_k[i] * vdot(&s_hist[i], &q);
        for (qv, yv) in q.iter_mut().zip(&y_hist[i]) {
            *qv -= alpha[i] * yv;
        }
    }
    if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
        let gamma = vdot(s, y) / vdot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for i in 0..m {
        let beta = rho_k[i] * vdot(&y_hist[i], &q);
        for (qv, sv) in q.iter_mut().zip(&s_hist[i]) {
            *qv += sv * (alpha[i] - beta);
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Step size at iteration `it` (1-based) of `total`.
pub fn schedule(it: usize, total: usize, base: f64) -> f64 {
    let peak = PEAK_MULTIPLIER * base;
    let warm = ((total as f64) * WARMUP_FRACTION).max(1.0);
    let t = it as f64;
    if t <= warm {
        peak * (WARMUP_START + (1.0 - WARMUP_START) * t / warm)
    } else {
        let span = (total as f64 - warm).max(1.0);
        let frac = ((t - warm) / span).min(1.0);
        let floor = peak * FINAL_FRACTION;
        floor + 0.5 * (peak - floor) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

fn train_adam(net: &mut Network, ds: &Dataset, config: &MqgdConfig) -> TrainingTrace {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let dim = net.params.len();
    let mut w = net.params.clone();
    let mut g = vec![0.0; dim];
    let mut m = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let mut f = net.loss_grad(&w, ds, Some(&mut g));
    let mut trace = TrainingTrace {
        loss_history: vec![f],
        stopped_at: 0,
        stop_reason: StopReason::MaxIters,
        evaluations: 1,
    };
    if !f.is_finite() {
        trace.stop_reason = StopReason::Diverged;
        return trace;
    }
    let mut plateau = Plateau::new(f, config);
    for it in 1..=config.max_iters {
        if inf_norm(&g) <= config.grad_tol {
            trace.stopped_at = it - 1;
            trace.stop_reason = StopReason::GradientTolerance;
            net.params = w;
            return trace;
        }
        let lr = schedule(it, config.max_iters, config.learning_rate);
        let bc1 = 1.0 - B1.powi(it as i32);
        let bc2 = 1.0 - B2.powi(it as i32);
        for k in 0..dim {
            m[k] = B1 * m[k] + (1.0 - B1) * g[k];
            v[k] = B2 * v[k] + (1.0 - B2) * g[k] * g[k];
            w[k] -= lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + EPS);
        }
        f = net.loss_grad(&w, ds, Some(&mut g));
        trace.evaluations += 1;
        trace.loss_history.push(f);
        trace.stopped_at = it;
        if !f.is_finite() {
            trace.stop_reason = StopReason::Diverged;
            net.params = w;
            return trace;
        }
        if plateau.observe(f) {
            trace.stop_reason = StopReason::Plateau;
            net.params = w;
            return trace;
        }
    }
    net.params = w;
    trace
}

/// Fraction of grid points where some adjacent pair of levels is out of order by more
/// than [`CROSSING_TOL`].
pub fn crossing_rate(model: &impl QuantileFunction, grid: &[Vec<f64>]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::validation("crossing grid is empty"));
    }
    let mut crossed = 0usize;
    for x in grid {
        if x.len() != model.n_features() {
            return Err(Error::dimension(format!(
                "grid point has {} entries, model expects {}",
                x.len(),
                model.n_features()
            )));
        }
        let v = model.quantiles_at(ArrayView1::from(&x[..]));
        if v.windows(2).any(|w| w[0] > w[1] + CROSSING_TOL) {
            crossed += 1;
        }
    }
    Ok(crossed as f64 / grid.len() as f64)
}

/// `points` evenly spaced values on `[lo, hi]`, each as `(1, x)`.
pub fn intercept_grid(lo: f64, hi: f64, points: usize) -> Vec<Vec<f64>> {
    match points {
        0 => Vec::new(),
        1 => vec![vec![1.0, lo]],
        _ => (0..points)
            .map(|k| vec![1.0, lo + (hi - lo) * k as f64 / (points - 1) as f64])
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::example_table;
    use crate::qr::fit_independent;

    fn taus() -> TauGrid {
        TauGrid::new(vec![0.10, 0.15]).unwrap()
    }

    #[test]
    fn composite_loss_at_independent_fit() {
        let ds = example_table();
        let model = fit_independent(&ds, &taus(), &SolveOptions::default()).unwrap();
        let loss = composite_loss(&Network::linear(&model), &ds).unwrap();
        let expected = model.fit_loss().iter().sum::<f64>() / 20.0;
        assert!((loss - expected).abs() < 1e-14);
        // Frozen from the published coefficient rows: (L10 + L15) / 20.
        let published = QuantileModel::new(
            ndarray::array![[2.1010, -0.0789], [1.6796, 0.0453]],
            taus(),
            Method::IndependentQR,
            vec![0.0; 2],
        )
        .unwrap();
        let lp = composite_loss(&Network::linear(&published), &ds).unwrap();
        assert!((lp - (3.047_526_655 + 4.219_053_992_5) / 20.0).abs() < 1e-12);
    }

    #[test]
    fn zero_data_zero_loss() {
        let ds = Dataset::from_rows(&[vec![1.0], vec![2.0]], vec![0.0, 0.0], &["x"], true).unwrap();
        let net = Network::from_params(2, 0, taus(), vec![0.0; 4]).unwrap();
        assert_eq!(composite_loss(&net, &ds).unwrap(), 0.0);
    }

    #[test]
    fn all_positive_residual_gradient() {
        let ds = example_table();
        let t = TauGrid::new(vec![0.3]).unwrap();
        let net = Network::from_params(2, 0, t, vec![-10.0, 0.0]).unwrap();
        let g = subgradient(&net, &ds).unwrap();
        let n = 20.0;
        let sx: f64 = ds.x().column(1).sum();
        assert!((g[0] + 0.3 * 20.0 / n).abs() < 1e-14);
        assert!((g[1] + 0.3 * sx / n).abs() < 1e-14);
    }

    #[test]
    fn subgradient_in_box_at_interpolant() {
        // Both points fitted exactly: each row contributes -(tau - s)/n * x_i with s in [0, 1].
        let ds = Dataset::from_rows(&[vec![0.0], vec![1.0]], vec![1.0, 3.0], &["x"], true).unwrap();
        let t = TauGrid::new(vec![0.4]).unwrap();
        let net = Network::from_params(2, 0, t, vec![1.0, 2.0]).unwrap();
        let g = subgradient(&net, &ds).unwrap();
        // intercept: sum over rows of -(0.4 - s_i)/2, s_i in [0,1] -> [-0.4, 0.6]
        assert!((-0.4..=0.6).contains(&g[0]));
        // slope: only row 2 has x = 1 -> [-0.2, 0.3]
        assert!((-0.2..=0.3).contains(&g[1]));
    }

    #[test]
    fn hidden_network_gradient_matches_differences() {
        let ds = example_table();
        let net = Network::init(2, 3, taus(), 7);
        let g = subgradient(&net, &ds).unwrap();
        let h = 1e-6;
        for k in 0..net.params.len() {
            let mut plus = net.clone();
            plus.params[k] += h;
            let mut minus = net.clone();
            minus.params[k] -= h;
            let fd = (composite_loss(&plus, &ds).unwrap() - composite_loss(&minus, &ds).unwrap()) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-4 * fd.abs().max(1e-3), "param {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn iteration_cap() {
        let cfg = MqgdConfig {
            max_iters: 1,
            patience: 0,
            ..Default::default()
        };
        let (_, trace) = fit(&example_table(), &taus(), &cfg).unwrap();
        assert_eq!(trace.stop_reason, StopReason::MaxIters);
        assert!(matches!(trace.loss_history.len(), 1 | 2));
        assert_eq!(trace.stopped_at, 1);
    }

    #[test]
    fn config_validation() {
        let bad = MqgdConfig {
            patience: 10,
            max_iters: 10,
            ..Default::default()
        };
        assert!(fit(&example_table(), &taus(), &bad).is_err());
        let bad = MqgdConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let hidden = MqgdConfig {
            hidden_units: 4,
            ..Default::default()
        };
        assert!(fit(&example_table(), &taus(), &hidden).is_err());
    }

    #[test]
    fn lbfgs_trace_is_monotone_and_deterministic() {
        let cfg = MqgdConfig {
            max_iters: 800,
            patience: 200,
            ..Default::default()
        };
        let ds = example_table();
        let (m1, t1) = fit(&ds, &taus(), &cfg).unwrap();
        let (m2, t2) = fit(&ds, &taus(), &cfg).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(m1, m2);
        assert!(t1.loss_history.windows(2).all(|w| w[1] <= w[0]));
        let floor = separable_floor(&ds, &taus(), &SolveOptions::default()).unwrap();
        assert!(t1.final_loss() >= floor - 1e-9);
    }

    #[test]
    fn median_training_approaches_lp() {
        let ds = example_table();
        let t = TauGrid::new(vec![0.5]).unwrap();
        let (_, trace) = fit(&ds, &t, &MqgdConfig::default()).unwrap();
        let lp = fit_single(&ds, 0.5, &SolveOptions::default()).unwrap().objective / 20.0;
        assert!(trace.final_loss() <= lp * 1.01, "{} vs {lp}", trace.final_loss());
    }

    #[test]
    fn first_order_runs_and_schedule_shape() {
        let cfg = MqgdConfig {
            optimizer: Optimizer::FirstOrderWithSchedule,
            max_iters: 3000,
            patience: 1000,
            ..Default::default()
        };
        let (_, trace) = fit(&example_table(), &taus(), &cfg).unwrap();
        assert!(trace.final_loss() < trace.loss_history[0]);
        let total = 100;
        let peak = schedule(30, total, 0.01);
        assert!((peak - 0.1).abs() < 1e-12);
        assert!(schedule(1, total, 0.01) < peak);
        assert!(schedule(100, total, 0.01) < schedule(60, total, 0.01));
        assert!((schedule(100, total, 0.01) - 1e-4).abs() < 1e-12);
    }

    #[test]
    fn hidden_network_trains() {
        let cfg = MqgdConfig {
            hidden_units: 4,
            max_iters: 500,
            patience: 100,
            ..Default::default()
        };
        let (net, trace) = fit_network(&example_table(), &taus(), &cfg).unwrap();
        assert_eq!(net.hidden_units(), 4);
        assert!(trace.final_loss() < trace.loss_history[0]);
        assert!(net.to_quantile_model(vec![0.0; 2]).is_err());
    }

    #[test]
    fn crossing_rate_examples() {
        let published = QuantileModel::new(
            ndarray::array![[2.1010, -0.0789], [1.6796, 0.0453]],
            taus(),
            Method::IndependentQR,
            vec![0.0; 2],
        )
        .unwrap();
        let grid = intercept_grid(0.0, 10.0, 100);
        // Lines meet at x = 0.4214 / 0.1242 = 3.393; grid points k * 10/99 below that: k = 0..=33.
        assert_eq!(crossing_rate(&published, &grid).unwrap(), 0.34);
        let flat = QuantileModel::new(
            ndarray::array![[1.0, 0.0], [1.0, 0.0]],
            taus(),
            Method::CJQR,
            vec![0.0; 2],
        )
        .unwrap();
        assert_eq!(crossing_rate(&flat, &grid).unwrap(), 0.0);
        assert!(crossing_rate(&flat, &[]).is_err());
    }

    #[test]
    fn trace_csv() {
        let trace = TrainingTrace {
            loss_history: vec![2.0, 1.5],
            stopped_at: 1,
            stop_reason: StopReason::MaxIters,
            evaluations: 3,
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iteration,loss\n0,2\n1,1.5\n");
    }
}
