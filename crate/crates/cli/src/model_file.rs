//! On-disk model format.

use std::path::Path;

use ndarray::Array2;
use qlab_core::{Method, QuantileModel, TauGrid};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub tool_version: String,
    pub method: Method,
    pub taus: TauGrid,
    /// Column names of the design, intercept first when present.
    pub feature_names: Vec<String>,
    pub response: String,
    pub intercept: bool,
    /// One row per level.
    pub coef: Vec<Vec<f64>>,
    pub fit_loss: Vec<f64>,
    pub seed: Option<u64>,
    pub config_hash: String,
}

impl ModelFile {
    pub fn to_model(&self) -> Result<QuantileModel, CliError> {
        let q = self.coef.len();
        let p = self.coef.first().map_or(0, Vec::len);
        if self.coef.iter().any(|r| r.len() != p) || p != self.feature_names.len() {
            return Err(CliError::input("model file: coefficient rows do not match feature names"));
        }
        let flat: Vec<f64> = self.coef.iter().flatten().copied().collect();
        let coef = Array2::from_shape_vec((q, p), flat).map_err(|e| CliError::input(e.to_string()))?;
        Ok(QuantileModel::new(coef, self.taus.clone(), self.method, self.fit_loss.clone())?)
    }

    /// Covariate names, intercept excluded.
    pub fn covariates(&self) -> &[String] {
        &self.feature_names[usize::from(self.intercept)..]
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        crate::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read model {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("bad model file {}: {e}", path.display())))
    }
}

pub fn coef_rows(model: &QuantileModel) -> Vec<Vec<f64>> {
    model.coef().rows().into_iter().map(|r| r.to_vec()).collect()
}
