use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::TauGrid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[serde(rename = "independent")]
    IndependentQR,
    #[serde(rename = "cjqr")]
    CJQR,
    #[serde(rename = "mqgd")]
    MQGD,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::IndependentQR => "independent",
            Method::CJQR => "cjqr",
            Method::MQGD => "mqgd",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "independent" | "qr" => Ok(Method::IndependentQR),
            "cjqr" | "joint" => Ok(Method::CJQR),
            "mqgd" | "gradient" => Ok(Method::MQGD),
            other => Err(Error::validation(format!("unknown method '{other}'"))),
        }
    }
}

/// Anything that maps a covariate vector to one value per quantile level.
pub trait QuantileFunction {
    fn taus(&self) -> &TauGrid;

    /// Number of covariates expected, intercept included.
    fn n_features(&self) -> usize;

    fn quantiles_at(&self, x: ArrayView1<'_, f64>) -> Vec<f64>;

    fn predict(&self, x_star: &[f64]) -> Result<QuantileSheet> {
        if x_star.len() != self.n_features() {
            return Err(Error::dimension(format!(
                "x* has {} entries, model expects {}",
                x_star.len(),
                self.n_features()
            )));
        }
        Ok(QuantileSheet {
            x_star: x_star.to_vec(),
            values: self.quantiles_at(ArrayView1::from(x_star)),
            taus: self.taus().clone(),
            isotonized: false,
        })
    }
}

/// Linear quantile model: row `j` of `coef` holds the coefficients for `taus[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileModel {
    coef: Array2<f64>,
    taus: TauGrid,
    method: Method,
    fit_loss: Vec<f64>,
}

impl QuantileModel {
    pub fn new(coef: Array2<f64>, taus: TauGrid, method: Method, fit_loss: Vec<f64>) -> Result<Self> {
        if coef.nrows() != taus.len() {
            return Err(Error::dimension(format!(
                "{} coefficient rows for {} quantile levels",
                coef.nrows(),
                taus.len()
            )));
        }
        if fit_loss.len() != taus.len() {
            return Err(Error::dimension(format!(
                "{} loss entries for {} quantile levels",
                fit_loss.len(),
                taus.len()
            )));
        }
        if coef.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("non-finite coefficient"));
        }
        Ok(QuantileModel {
            coef,
            taus,
            method,
            fit_loss,
        })
    }

    pub fn coef(&self) -> &Array2<f64> {
        &self.coef
    }

    pub fn coef_row(&self, j: usize) -> ArrayView1<'_, f64> {
        self.coef.row(j)
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn fit_loss(&self) -> &[f64] {
        &self.fit_loss
    }

    pub fn q(&self) -> usize {
        self.coef.nrows()
    }

    pub fn p(&self) -> usize {
        self.coef.ncols()
    }
}

impl QuantileFunction for QuantileModel {
    fn taus(&self) -> &TauGrid {
        &self.taus
    }

    fn n_features(&self) -> usize {
        self.coef.ncols()
    }

    fn quantiles_at(&self, x: ArrayView1<'_, f64>) -> Vec<f64> {
        self.coef.rows().into_iter().map(|b| b.dot(&x)).collect()
    }
}

/// Predicted quantile values at one evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileSheet {
    pub x_star: Vec<f64>,
    pub values: Vec<f64>,
    pub taus: TauGrid,
    pub isotonized: bool,
}

impl QuantileSheet {
    pub fn new(x_star: Vec<f64>, values: Vec<f64>, taus: TauGrid) -> Result<Self> {
        if values.len() != taus.len() {
            return Err(Error::dimension(format!(
                "{} values for {} quantile levels",
                values.len(),
                taus.len()
            )));
        }
        Ok(QuantileSheet {
            x_star,
            values,
            taus,
            isotonized: false,
        })
    }

    /// First adjacent pair with `values[j] > values[j + 1] + tol`.
    pub fn first_violation(&self, tol: f64) -> Option<usize> {
        self.values.windows(2).position(|w| w[0] > w[1] + tol)
    }

    pub fn is_monotone(&self) -> bool {
        self.first_violation(0.0).is_none()
    }

    /// Largest `values[j] - values[j + 1]`, or 0 when ordered.
    pub fn max_violation(&self) -> f64 {
        self.values
            .windows(2)
            .map(|w| w[0] - w[1])
            .fold(0.0, f64::max)
    }
}
