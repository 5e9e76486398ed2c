//! Datasets, quantile grids and CSV ingestion.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INTERCEPT_NAME: &str = "(intercept)";

/// Design matrix plus response. Immutable once validated.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Array1<f64>,
    feature_names: Vec<String>,
    response_name: String,
    intercept: bool,
}

impl Dataset {
    /// Builds a dataset from a full design matrix (intercept column already in place when
    /// `intercept` is set).
    pub fn new(
        x: Array2<f64>,
        y: Array1<f64>,
        feature_names: Vec<String>,
        response_name: impl Into<String>,
        intercept: bool,
    ) -> Result<Self> {
        let ds = Dataset {
            x,
            y,
            feature_names,
            response_name: response_name.into(),
            intercept,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Builds a dataset from raw covariate rows, prepending a ones column when `intercept`.
    pub fn from_rows(
        rows: &[Vec<f64>],
        y: Vec<f64>,
        covariate_names: &[&str],
        intercept: bool,
    ) -> Result<Self> {
        let k = covariate_names.len();
        let p = k + usize::from(intercept);
        let mut x = Array2::<f64>::zeros((rows.len(), p));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::dimension(format!(
                    "row {} has {} covariates, expected {k}",
                    i + 1,
                    row.len()
                )));
            }
            let offset = usize::from(intercept);
            if intercept {
                x[[i, 0]] = 1.0;
            }
            for (c, v) in row.iter().enumerate() {
                x[[i, c + offset]] = *v;
            }
        }
        let mut names = Vec::with_capacity(p);
        if intercept {
            names.push(INTERCEPT_NAME.to_string());
        }
        names.extend(covariate_names.iter().map(|s| s.to_string()));
        Dataset::new(x, Array1::from(y), names, "y", intercept)
    }

    fn validate(&self) -> Result<()> {
        let (n, p) = self.x.dim();
        if p == 0 {
            return Err(Error::validation("dataset has no columns"));
        }
        if n < p {
            return Err(Error::validation(format!(
                "need at least as many rows as columns (n = {n}, p = {p})"
            )));
        }
        if self.y.len() != n {
            return Err(Error::dimension(format!(
                "response has {} entries but design matrix has {n} rows",
                self.y.len()
            )));
        }
        if self.feature_names.len() != p {
            return Err(Error::dimension(format!(
                "{} feature names for {p} columns",
                self.feature_names.len()
            )));
        }
        for ((i, j), v) in self.x.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::validation(format!(
                    "non-finite value in row {}, column '{}'",
                    i + 1,
                    self.feature_names[j]
                )));
            }
        }
        if let Some(i) = self.y.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite response in row {}",
                i + 1
            )));
        }
        if self.intercept {
            if let Some(i) = self.x.column(0).iter().position(|&v| v != 1.0) {
                return Err(Error::validation(format!(
                    "intercept column is not 1.0 in row {}",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.x.row(i)
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Feature names without the synthetic intercept column.
    pub fn covariate_names(&self) -> &[String] {
        &self.feature_names[usize::from(self.intercept)..]
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    /// Same design, response multiplied by `c`.
    pub fn with_scaled_response(&self, c: f64) -> Result<Self> {
        Dataset::new(
            self.x.clone(),
            self.y.mapv(|v| v * c),
            self.feature_names.clone(),
            self.response_name.clone(),
            self.intercept,
        )
    }

    /// Writes covariates (intercept excluded) followed by the response column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.covariate_names().iter().map(String::as_str).collect();
        header.push(&self.response_name);
        w.write_record(&header).map_err(csv_err)?;
        let offset = usize::from(self.intercept);
        for i in 0..self.n() {
            let mut rec: Vec<String> = (offset..self.p())
                .map(|j| format!("{}", self.x[[i, j]]))
                .collect();
            rec.push(format!("{}", self.y[i]));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// A parsed numeric CSV: header plus rows of finite values.
#[derive(Debug, Clone)]
pub struct NumericTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl NumericTable {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(str::to_string)
            .collect();
        if headers.is_empty() || headers.iter().all(String::is_empty) {
            return Err(Error::Parse("missing header row".into()));
        }
        let mut rows = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let mut row = Vec::with_capacity(rec.len());
            for (c, cell) in rec.iter().enumerate() {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Parse(format!(
                        "non-numeric cell '{cell}' in row {}, column '{}'",
                        r + 1,
                        headers[c]
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::validation(format!(
                        "non-finite value '{cell}' in row {}, column '{}'",
                        r + 1,
                        headers[c]
                    )));
                }
                row.push(v);
            }
            rows.push(row);
        }
        Ok(NumericTable { headers, rows })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_reader(file)
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::validation(format!("missing column '{name}'")))
    }

    /// Splits into (covariate rows, response) using `covariates` in the given order.
    pub fn select(&self, covariates: &[String], response: &str) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let y_idx = self.column_index(response)?;
        let cols = covariates
            .iter()
            .map(|c| self.column_index(c))
            .collect::<Result<Vec<_>>>()?;
        let xs = self
            .rows
            .iter()
            .map(|row| cols.iter().map(|&c| row[c]).collect())
            .collect();
        let ys = self.rows.iter().map(|row| row[y_idx]).collect();
        Ok((xs, ys))
    }

    /// Interprets every non-response column as a covariate, in file order.
    pub fn into_dataset(self, response_column: &str, intercept: bool) -> Result<Dataset> {
        let y_idx = self.column_index(response_column)?;
        let covariates: Vec<String> = self
            .headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != y_idx)
            .map(|(_, h)| h.clone())
            .collect();
        let (xs, ys) = self.select(&covariates, response_column)?;
        let names: Vec<&str> = covariates.iter().map(String::as_str).collect();
        let mut ds = Dataset::from_rows(&xs, ys, &names, intercept)?;
        ds.response_name = response_column.to_string();
        Ok(ds)
    }
}

/// Reads a headed CSV; every column other than `response_column` becomes a covariate.
pub fn load_csv(path: impl AsRef<Path>, response_column: &str, intercept: bool) -> Result<Dataset> {
    NumericTable::from_path(path.as_ref())?.into_dataset(response_column, intercept)
}

const EXAMPLE_X: [f64; 20] = [
    0.2095, 0.6809, 1.2936, 1.8535, 2.3583, 2.4368, 2.8754, 4.1162, 4.5670, 4.7146, 4.8946,
    4.9042, 5.8864, 6.2050, 6.3962, 7.5324, 7.7828, 8.4835, 9.4854, 9.9582,
];
const EXAMPLE_Y: [f64; 20] = [
    1.7727, 2.5299, 2.0010, 2.1010, 2.4940, 2.1642, 2.4477, 2.5742, 4.3145, 1.5696, 2.4680,
    2.1534, 1.9251, 1.6796, 4.5568, 3.5100, 3.5223, 3.0996, 0.3689, 3.0694,
];

/// The 20-observation prior/current score sample used for the worked crossing example,
/// with an intercept column.
pub fn example_table() -> Dataset {
    let rows: Vec<Vec<f64>> = EXAMPLE_X.iter().map(|&x| vec![x]).collect();
    let mut ds = Dataset::from_rows(&rows, EXAMPLE_Y.to_vec(), &["X"], true)
        .expect("embedded dataset is valid");
    ds.response_name = "Y".to_string();
    ds
}

/// Strictly increasing quantile levels in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TauGrid(Vec<f64>);

impl TauGrid {
    pub fn new(taus: Vec<f64>) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::validation("tau grid is empty"));
        }
        for &t in &taus {
            check_tau(t)?;
        }
        if let Some(w) = taus.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::validation(format!(
                "tau grid must be strictly increasing ({} followed by {})",
                w[0], w[1]
            )));
        }
        Ok(TauGrid(taus))
    }

    /// The 99 percentile levels 0.01, 0.02, ..., 0.99.
    pub fn percentiles() -> Self {
        TauGrid((1..=99).map(|k| k as f64 / 100.0).collect())
    }

    /// Parses either a comma-separated list or the keyword `sgp`.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if spec.eq_ignore_ascii_case("sgp") {
            return Ok(Self::percentiles());
        }
        let taus = spec
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::validation(format!("cannot parse tau '{}'", s.trim())))
            })
            .collect::<Result<Vec<_>>>()?;
        TauGrid::new(taus)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn first(&self) -> f64 {
        self.0[0]
    }

    pub fn last(&self) -> f64 {
        self.0[self.0.len() - 1]
    }
}

impl TryFrom<Vec<f64>> for TauGrid {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        TauGrid::new(v)
    }
}

impl From<TauGrid> for Vec<f64> {
    fn from(g: TauGrid) -> Self {
        g.0
    }
}

impl std::ops::Index<usize> for TauGrid {
    type Output = f64;

    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}

impl fmt::Display for TauGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|t| format!("{t}")).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::TauDomain(tau))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_table_matches_published_rows() {
        let ds = example_table();
        assert_eq!((ds.n(), ds.p()), (20, 2));
        assert_eq!(ds.row(0).to_vec(), vec![1.0, 0.2095]);
        assert_eq!(ds.y()[0], 1.7727);
        assert_eq!(ds.row(19).to_vec(), vec![1.0, 9.9582]);
        assert_eq!(ds.y()[19], 3.0694);
        assert_eq!(ds.feature_names(), &["(intercept)".to_string(), "X".to_string()]);
        for i in 0..20 {
            let x4 = (ds.x()[[i, 1]] * 1e4).round() / 1e4;
            let y4 = (ds.y()[i] * 1e4).round() / 1e4;
            assert_eq!(x4, EXAMPLE_X[i]);
            assert_eq!(y4, EXAMPLE_Y[i]);
        }
    }

    #[test]
    fn load_table_csv_with_intercept() {
        let mut buf = Vec::new();
        example_table().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("X,Y\n0.2095,1.7727\n"));
        let ds = NumericTable::from_reader(text.as_bytes())
            .unwrap()
            .into_dataset("Y", true)
            .unwrap();
        assert_eq!((ds.n(), ds.p()), (20, 2));
        assert_eq!(ds, example_table());
    }

    #[test]
    fn single_row_without_intercept() {
        let ds = NumericTable::from_reader("x,y\n2.5,1\n".as_bytes())
            .unwrap()
            .into_dataset("y", false)
            .unwrap();
        assert_eq!((ds.n(), ds.p()), (1, 1));
        assert_eq!(ds.x()[[0, 0]], 2.5);
    }

    #[test]
    fn nan_cell_is_rejected() {
        let err = NumericTable::from_reader("x,y\n1,NaN\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn non_numeric_and_missing_columns() {
        let err = NumericTable::from_reader("x,y\n1,abc\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("abc"));
        let err = NumericTable::from_reader("x,y\n1,2\n".as_bytes())
            .unwrap()
            .into_dataset("z", true)
            .unwrap_err();
        assert!(err.to_string().contains("missing column 'z'"));
    }

    #[test]
    fn too_few_rows() {
        let err = NumericTable::from_reader("a,b,y\n1,2,3\n".as_bytes())
            .unwrap()
            .into_dataset("y", true)
            .unwrap_err();
        assert!(err.to_string().contains("n = 1, p = 3"), "{err}");
    }

    #[test]
    fn tau_grid_validation() {
        assert!(TauGrid::new(vec![0.1, 0.15]).is_ok());
        assert!(TauGrid::new(vec![0.15, 0.1]).is_err());
        assert!(TauGrid::new(vec![0.1, 0.1]).is_err());
        assert!(matches!(TauGrid::new(vec![1.5]), Err(Error::TauDomain(_))));
        assert!(TauGrid::new(vec![0.0]).is_err());
        assert!(TauGrid::new(vec![]).is_err());
        let sgp = TauGrid::parse("sgp").unwrap();
        assert_eq!(sgp.len(), 99);
        assert_eq!(sgp[0], 0.01);
        assert_eq!(sgp[98], 0.99);
        assert_eq!(sgp[14], "0.15".parse::<f64>().unwrap());
        assert_eq!(TauGrid::parse("0.10, 0.15").unwrap().as_slice(), &[0.1, 0.15]);
    }
}
