//! Flat key-value run configuration. Precedence: command-line flag, then config
//! file, then built-in default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Every key a config file may set. Unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub response: Option<String>,
    pub intercept: Option<bool>,
    pub method: Option<String>,
    pub taus: Option<String>,
    pub policy: Option<String>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub hidden_units: Option<usize>,
    pub max_iters: Option<usize>,
    pub patience: Option<usize>,
    pub min_improvement: Option<f64>,
    pub optimizer: Option<String>,
    pub learning_rate: Option<f64>,
    pub history: Option<usize>,
    pub grad_tol: Option<f64>,
    pub max_nq: Option<usize>,
    pub repeats: Option<usize>,
    pub n_list: Option<Vec<usize>>,
    pub q_list: Option<Vec<usize>>,
    pub mqgd_iters: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::input(format!("bad config {}: {e}", path.display())))
    }

    pub fn load_opt(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(FileConfig::default()), Self::load)
    }
}

/// Hex SHA-256 of the effective settings serialized as JSON.
pub fn settings_hash<T: Serialize>(settings: &T) -> String {
    let bytes = serde_json::to_vec(settings).expect("settings serialize");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_file() {
        let cfg: FileConfig = toml::from_str("method = \"cjqr\"\ntaus = \"0.1,0.15\"\nseed = 9\nn_list = [100, 200]\n").unwrap();
        assert_eq!(cfg.method.as_deref(), Some("cjqr"));
        assert_eq!(cfg.seed, Some(9));
        assert_eq!(cfg.n_list, Some(vec![100, 200]));
        assert!(toml::from_str::<FileConfig>("nonsense = 1").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = FileConfig { seed: Some(1), ..Default::default() };
        let b = FileConfig { seed: Some(2), ..Default::default() };
        assert_eq!(settings_hash(&a), settings_hash(&a.clone()));
        assert_ne!(settings_hash(&a), settings_hash(&b));
        assert_eq!(settings_hash(&a).len(), 64);
    }
}
