//! Growth-percentile assignment: bracket a student's score between adjacent predicted
//! quantiles and interpolate the level linearly.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::isotonize::Correction;
use crate::model::{QuantileFunction, QuantileSheet};

/// What to do with a sheet whose values are out of order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    RequireMonotone,
    AutoIsotonize(Correction),
}

impl Policy {
    pub fn label(self) -> String {
        match self {
            Policy::RequireMonotone => "require-monotone".into(),
            Policy::AutoIsotonize(c) => format!("auto-isotonize({c})"),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Policy {
    type Err = Error;

    /// Accepts `require-monotone`, `rearrange`, `pav`, or `auto-isotonize(rearrange|pav)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let inner = s
            .strip_prefix("auto-isotonize(")
            .and_then(|r| r.strip_suffix(')'))
            .unwrap_or(&s);
        match inner {
            "require-monotone" | "require_monotone" | "strict" => Ok(Policy::RequireMonotone),
            "auto-isotonize" | "auto" => Ok(Policy::AutoIsotonize(Correction::Rearrange)),
            other => match other.parse::<Correction>()? {
                Correction::None => Err(Error::validation(
                    "auto-isotonize needs a correction (rearrange or pav)",
                )),
                c => Ok(Policy::AutoIsotonize(c)),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bracket {
    /// Between knots `k` and `k + 1`.
    Between(usize),
    BelowRange,
    AboveRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SgpScore {
    pub tau_hat: f64,
    pub bracket: Bracket,
    pub clamped: bool,
}

impl SgpScore {
    /// Conventional 1..=99 integer percentile.
    pub fn sgp_1_99(&self) -> u32 {
        ((100.0 * self.tau_hat).round() as i64).clamp(1, 99) as u32
    }
}

/// Resolves `policy` against `sheet`, returning the monotone sheet to interpolate on.
pub fn prepare_sheet(sheet: &QuantileSheet, policy: Policy) -> Result<QuantileSheet> {
    match sheet.first_violation(0.0) {
        None => Ok(sheet.clone()),
        Some(j) => match policy {
            Policy::RequireMonotone => Err(Error::Crossing {
                lower: j,
                upper: j + 1,
                lower_value: sheet.values[j],
                upper_value: sheet.values[j + 1],
            }),
            Policy::AutoIsotonize(c) => Ok(c.apply(sheet)),
        },
    }
}

pub fn assign_sgp(sheet: &QuantileSheet, y_star: f64, policy: Policy) -> Result<SgpScore> {
    if sheet.values.len() < 2 {
        return Err(Error::validation("interpolation needs at least two quantile levels"));
    }
    if !y_star.is_finite() {
        return Err(Error::validation(format!("score {y_star} is not finite")));
    }
    let sheet = prepare_sheet(sheet, policy)?;
    Ok(interpolate(&sheet, y_star))
}

fn interpolate(sheet: &QuantileSheet, y: f64) -> SgpScore {
    let v = &sheet.values;
    let taus = sheet.taus.as_slice();
    let q = v.len();
    if y < v[0] {
        return SgpScore {
            tau_hat: taus[0],
            bracket: Bracket::BelowRange,
            clamped: true,
        };
    }
    if y > v[q - 1] {
        return SgpScore {
            tau_hat: taus[q - 1],
            bracket: Bracket::AboveRange,
            clamped: true,
        };
    }
    let k = (0..q - 1)
        .find(|&k| v[k] <= y && y <= v[k + 1])
        .expect("y lies inside the knot span of a monotone sheet");
    let width = v[k + 1] - v[k];
    let tau_hat = if width > 0.0 {
        taus[k] + (taus[k + 1] - taus[k]) * (y - v[k]) / width
    } else {
        taus[k]
    };
    SgpScore {
        tau_hat,
        bracket: Bracket::Between(k),
        clamped: false,
    }
}

/// Students to score: covariate rows (intercept included when the model uses one),
/// current scores, and identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct Students {
    pub ids: Vec<String>,
    pub x: Array2<f64>,
    pub y: Vec<f64>,
}

impl Students {
    pub fn from_dataset(ds: &Dataset) -> Self {
        Students {
            ids: (1..=ds.n()).map(|i| i.to_string()).collect(),
            x: ds.x().clone(),
            y: ds.y().to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudentResult {
    pub id: String,
    pub score: Option<SgpScore>,
    pub crossed_before_correction: bool,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchSummary {
    pub n: usize,
    pub policy: String,
    pub n_crossed: usize,
    pub crossing_frequency: f64,
    pub max_violation: f64,
    pub n_crossing_errors: usize,
    pub n_clamped: usize,
}

/// Scores every student: predict, correct per policy, interpolate.
pub fn sgp_batch(
    model: &(impl QuantileFunction + Sync),
    students: &Students,
    policy: Policy,
) -> Result<(Vec<StudentResult>, BatchSummary)> {
    if students.x.ncols() != model.n_features() && !students.is_empty() {
        return Err(Error::dimension(format!(
            "students have {} covariates, model expects {}",
            students.x.ncols(),
            model.n_features()
        )));
    }
    if model.taus().len() < 2 {
        return Err(Error::validation("interpolation needs at least two quantile levels"));
    }
    let results: Vec<StudentResult> = (0..students.len())
        .into_par_iter()
        .map(|i| {
            let x: ArrayView1<'_, f64> = students.x.row(i);
            let sheet = QuantileSheet {
                x_star: x.to_vec(),
                values: model.quantiles_at(x),
                taus: model.taus().clone(),
                isotonized: false,
            };
            let crossed = sheet.first_violation(0.0).is_some();
            let score = match assign_sgp(&sheet, students.y[i], policy) {
                Ok(s) => Some(s),
                Err(Error::Crossing { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(StudentResult {
                id: students.ids[i].clone(),
                score,
                crossed_before_correction: crossed,
                violation: sheet.max_violation(),
            })
        })
        .collect::<Result<_>>()?;

    let n = results.len();
    let n_crossed = results.iter().filter(|r| r.crossed_before_correction).count();
    let summary = BatchSummary {
        n,
        policy: policy.label(),
        n_crossed,
        crossing_frequency: if n == 0 { 0.0 } else { n_crossed as f64 / n as f64 },
        max_violation: results.iter().map(|r| r.violation).fold(0.0, f64::max),
        n_crossing_errors: results.iter().filter(|r| r.score.is_none()).count(),
        n_clamped: results
            .iter()
            .filter(|r| r.score.is_some_and(|s| s.clamped))
            .count(),
    };
    Ok((results, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundTrip {
    pub max_discrepancy: f64,
    /// Set when some knot does not map back to its own level (repeated knot values).
    pub flagged: bool,
}

/// Scores each knot of the corrected sheet at `x_star` and reports the worst
/// `|tau_hat - tau_j|`.
pub fn percentile_roundtrip(
    model: &impl QuantileFunction,
    x_star: &[f64],
    correction: Correction,
) -> Result<RoundTrip> {
    let raw = model.predict(x_star)?;
    let sheet = if raw.is_monotone() {
        raw
    } else if correction == Correction::None {
        return Err(Error::validation(
            "round trip needs a monotone sheet; choose rearrange or pav",
        ));
    } else {
        correction.apply(&raw)
    };
    let mut worst = 0.0f64;
    for (j, &v) in sheet.values.iter().enumerate() {
        let s = assign_sgp(&sheet, v, Policy::RequireMonotone)?;
        worst = worst.max((s.tau_hat - sheet.taus[j]).abs());
    }
    Ok(RoundTrip {
        max_discrepancy: worst,
        flagged: worst > 1e-12,
    })
}
