//! Post-hoc monotonization of predicted quantile values, applied one evaluation
//! point at a time.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{QuantileFunction, QuantileSheet};

/// Residual slack used when deciding whether an observation lies at or below a fitted value.
pub const COVERAGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correction {
    None,
    /// Sort the values (monotone rearrangement).
    Rearrange,
    /// Unit-weight least-squares projection onto the monotone cone.
    Pav,
}

impl Correction {
    pub fn as_str(self) -> &'static str {
        match self {
            Correction::None => "none",
            Correction::Rearrange => "rearrange",
            Correction::Pav => "pav",
        }
    }

    pub fn apply(self, sheet: &QuantileSheet) -> QuantileSheet {
        match self {
            Correction::None => sheet.clone(),
            Correction::Rearrange => rearrange(sheet),
            Correction::Pav => pav_project(sheet, None).expect("unit weights are positive"),
        }
    }
}

impl fmt::Display for Correction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Correction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Correction::None),
            "rearrange" | "sort" => Ok(Correction::Rearrange),
            "pav" => Ok(Correction::Pav),
            other => Err(Error::validation(format!("unknown correction '{other}'"))),
        }
    }
}

pub fn rearrange(sheet: &QuantileSheet) -> QuantileSheet {
    let mut values = sheet.values.clone();
    values.sort_by(f64::total_cmp);
    QuantileSheet {
        values,
        isotonized: true,
        ..sheet.clone()
    }
}

pub fn pav_project(sheet: &QuantileSheet, weights: Option<&[f64]>) -> Result<QuantileSheet> {
    let values = match weights {
        Some(w) => {
            if w.len() != sheet.values.len() {
                return Err(Error::dimension(format!(
                    "{} weights for {} values",
                    w.len(),
                    sheet.values.len()
                )));
            }
            if let Some(bad) = w.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::validation(format!("weights must be positive, got {bad}")));
            }
            pav(&sheet.values, w)
        }
        None => pav(&sheet.values, &vec![1.0; sheet.values.len()]),
    };
    Ok(QuantileSheet {
        values,
        isotonized: true,
        ..sheet.clone()
    })
}

/// Weighted least-squares non-decreasing fit by pooling adjacent violators.
pub fn pav(values: &[f64], weights: &[f64]) -> Vec<f64> {
    // Blocks as (weighted mean, total weight, length).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (m2, w2, l2) = blocks[blocks.len() - 1];
            let (m1, w1, l1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            let w = w1 + w2;
            blocks.truncate(blocks.len() - 2);
            blocks.push(((m1 * w1 + m2 * w2) / w, w, l1 + l2));
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, l)| std::iter::repeat_n(m, l))
        .collect()
}

/// Longest vector `pav_oracle` accepts; it enumerates `2^(q-1)` partitions.
pub const PAV_ORACLE_MAX_LEN: usize = 12;

/// Exact weighted isotonic least squares by enumerating every split into
/// contiguous blocks. The optimum is a vector of block means, so the best
/// monotone candidate among them is the projection. Test support for `pav`.
pub fn pav_oracle(values: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    let q = values.len();
    if q == 0 || q > PAV_ORACLE_MAX_LEN || weights.len() != q {
        return Err(Error::validation(format!(
            "oracle needs 1..={PAV_ORACLE_MAX_LEN} values with matching weights (got {q} and {})",
            weights.len()
        )));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << (q - 1)) {
        // Bit k set: a block boundary after position k.
        let mut fitted = Vec::with_capacity(q);
        let mut start = 0;
        let mut prev = f64::NEG_INFINITY;
        let mut ok = true;
        for end in 1..=q {
            if end < q && mask & (1 << (end - 1)) == 0 {
                continue;
            }
            let w: f64 = weights[start..end].iter().sum();
            let m = values[start..end].iter().zip(&weights[start..end]).map(|(v, w)| v * w).sum::<f64>() / w;
            if m < prev {
                ok = false;
                break;
            }
            prev = m;
            fitted.extend(std::iter::repeat_n(m, end - start));
            start = end;
        }
        if !ok {
            continue;
        }
        let sse: f64 = fitted.iter().zip(values).zip(weights).map(|((f, v), w)| w * (f - v).powi(2)).sum();
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, fitted));
        }
    }
    Ok(best.expect("the all-in-one partition is always monotone").1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub tau: f64,
    pub coverage_raw: f64,
    pub gap_raw: f64,
    pub coverage_corrected: f64,
    pub gap_corrected: f64,
}

/// Empirical `#{i : y_i <= Q(tau_j | x_i)} / n` per level, before and after `correction`.
pub fn quantile_property_gap(
    model: &impl QuantileFunction,
    ds: &Dataset,
    correction: Correction,
) -> Result<Vec<CoverageRow>> {
    if model.n_features() != ds.p() {
        return Err(Error::dimension(format!(
            "model expects {} features, dataset has {}",
            model.n_features(),
            ds.p()
        )));
    }
    let taus = model.taus().clone();
    let q = taus.len();
    let mut raw = vec![0usize; q];
    let mut corrected = vec![0usize; q];
    for (x, &y) in ds.x().rows().into_iter().zip(ds.y()) {
        let sheet = QuantileSheet {
            x_star: x.to_vec(),
            values: model.quantiles_at(x),
            taus: taus.clone(),
            isotonized: false,
        };
        let fixed = correction.apply(&sheet);
        for j in 0..q {
            raw[j] += usize::from(y <= sheet.values[j] + COVERAGE_TOL);
            corrected[j] += usize::from(y <= fixed.values[j] + COVERAGE_TOL);
        }
    }
    let n = ds.n() as f64;
    Ok((0..q)
        .map(|j| {
            let tau = taus[j];
            let c_raw = raw[j] as f64 / n;
            let c_fix = corrected[j] as f64 / n;
            CoverageRow {
                tau,
                coverage_raw: c_raw,
                gap_raw: (c_raw - tau).abs(),
                coverage_corrected: c_fix,
                gap_corrected: (c_fix - tau).abs(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TauGrid;
    use crate::model::{Method, QuantileModel};
    use proptest::prelude::*;

    fn sheet(values: Vec<f64>) -> QuantileSheet {
        let q = values.len();
        let taus = TauGrid::new((1..=q).map(|k| k as f64 / (q + 1) as f64).collect()).unwrap();
        QuantileSheet::new(vec![1.0], values, taus).unwrap()
    }

    #[test]
    fn rearrange_examples() {
        let s = rearrange(&sheet(vec![2.1010, 1.6796]));
        assert_eq!(s.values, vec![1.6796, 2.1010]);
        assert!(s.isotonized);
        assert_eq!(rearrange(&sheet(vec![1.312, 2.133])).values, vec![1.312, 2.133]);
        assert_eq!(rearrange(&sheet(vec![0.7; 4])).values, vec![0.7; 4]);
    }

    #[test]
    fn pav_examples() {
        let s = pav_project(&sheet(vec![2.1010, 1.6796]), None).unwrap();
        assert!((s.values[0] - 1.8903).abs() < 1e-12 && (s.values[1] - 1.8903).abs() < 1e-12);
        assert_eq!(pav_project(&sheet(vec![1.0, 2.0, 2.0]), None).unwrap().values, vec![1.0, 2.0, 2.0]);
        assert_eq!(pav_project(&sheet(vec![3.0, 1.0, 2.0]), None).unwrap().values, vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn pav_weights() {
        let s = pav_project(&sheet(vec![3.0, 1.0]), Some(&[3.0, 1.0])).unwrap();
        assert_eq!(s.values, vec![2.5, 2.5]);
        assert!(pav_project(&sheet(vec![3.0, 1.0]), Some(&[1.0, 0.0])).is_err());
        assert!(pav_project(&sheet(vec![3.0, 1.0]), Some(&[1.0, -2.0])).is_err());
        assert!(pav_project(&sheet(vec![3.0, 1.0]), Some(&[1.0])).is_err());
    }

    #[test]
    fn coverage_of_perfect_interpolant() {
        let ds = Dataset::from_rows(&[vec![2.0]], vec![5.0], &["x"], false).unwrap();
        let m = QuantileModel::new(
            ndarray::array![[2.5]],
            TauGrid::new(vec![0.5]).unwrap(),
            Method::IndependentQR,
            vec![0.0],
        )
        .unwrap();
        let rows = quantile_property_gap(&m, &ds, Correction::None).unwrap();
        assert_eq!(rows[0].coverage_raw, 1.0);
        assert_eq!(rows[0].gap_raw, 0.5);
    }

    proptest! {
        #[test]
        fn rearrange_properties(v in prop::collection::vec(-50.0f64..50.0, 1..12)) {
            let s = sheet(v.clone());
            let once = rearrange(&s);
            prop_assert!(once.is_monotone());
            prop_assert_eq!(rearrange(&once).values, once.values.clone());
            let mut sorted = v;
            sorted.sort_by(f64::total_cmp);
            prop_assert_eq!(once.values, sorted);
        }

        #[test]
        fn pav_properties(
            vw in prop::collection::vec((-50.0f64..50.0, 0.1f64..5.0), 1..12)
        ) {
            let (v, w): (Vec<f64>, Vec<f64>) = vw.into_iter().unzip();
            let s = sheet(v.clone());
            let once = pav_project(&s, Some(&w)).unwrap();
            prop_assert!(once.first_violation(1e-12).is_none());
            let twice = pav_project(&once, Some(&w)).unwrap();
            for (a, b) in once.values.iter().zip(&twice.values) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            let wsum: f64 = w.iter().sum();
            let before: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / wsum;
            let after: f64 = once.values.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / wsum;
            prop_assert!((before - after).abs() <= 1e-9);
        }

        #[test]
        fn pav_matches_oracle(
            vw in prop::collection::vec((-50.0f64..50.0, 0.1f64..5.0), 1..=6)
        ) {
            let (v, w): (Vec<f64>, Vec<f64>) = vw.into_iter().unzip();
            let fast = pav(&v, &w);
            let exact = pav_oracle(&v, &w).unwrap();
            for (a, b) in fast.iter().zip(&exact) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
