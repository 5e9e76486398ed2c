use std::path::{Path, PathBuf};

use clap::Args;
use ndarray::Array2;
use qlab_core::sgp::{self, BatchSummary, Bracket, StudentResult, Students};
use qlab_core::{Method, Policy};
use serde::Serialize;

use crate::config::{settings_hash, FileConfig};
use crate::model_file::ModelFile;
use crate::{CliError, CommonArgs, EXIT_OK, TOOL_VERSION};

/// Column names recognized as student identifiers.
pub const ID_COLUMNS: [&str; 2] = ["student_id", "id"];

#[derive(Debug, Clone, Default, Args)]
pub struct SgpArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Model JSON written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Students CSV: the model's covariate columns, its response column, optional student_id.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// require-monotone | rearrange | pav (auto-isotonize with that correction)
    #[arg(long)]
    pub policy: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
struct SgpSettings<'a> {
    model: &'a Path,
    data: &'a Path,
    policy: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SgpReport {
    pub tool_version: String,
    pub method: Method,
    #[serde(flatten)]
    pub summary: BatchSummary,
    pub config_hash: String,
}

/// Reads students for `model`. A zero-byte or header-only file yields no students.
pub fn read_students(path: &Path, model: &ModelFile) -> Result<Students, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let p = model.feature_names.len();
    let empty = || Students {
        ids: Vec::new(),
        x: Array2::zeros((0, p)),
        y: Vec::new(),
    };
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(empty());
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
    let headers = rdr.headers().map_err(|e| CliError::input(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::input(format!("students file lacks column '{name}'")))
    };
    let cov_idx = model.covariates().iter().map(|c| col(c)).collect::<Result<Vec<_>, _>>()?;
    let y_idx = col(&model.response)?;
    let id_idx = ID_COLUMNS.iter().find_map(|c| headers.iter().position(|h| h == *c));

    let mut ids = Vec::new();
    let mut flat = Vec::new();
    let mut y = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::input(e.to_string()))?;
        let num = |c: usize| -> Result<f64, CliError> {
            rec.get(c)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::input(format!("row {}: bad value in column '{}'", r + 1, &headers[c])))
        };
        if model.intercept {
            flat.push(1.0);
        }
        for &c in &cov_idx {
            flat.push(num(c)?);
        }
        y.push(num(y_idx)?);
        ids.push(match id_idx {
            Some(c) => rec.get(c).unwrap_or_default().to_string(),
            None => (r + 1).to_string(),
        });
    }
    let x = Array2::from_shape_vec((y.len(), p), flat).map_err(|e| CliError::input(e.to_string()))?;
    Ok(Students { ids, x, y })
}

pub fn write_scores(path: &Path, results: &[StudentResult]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(crate::create_file(path)?);
    let err = |e: csv::Error| CliError::input(e.to_string());
    w.write_record([
        "student_id",
        "tau_hat",
        "sgp",
        "bracket",
        "clamped",
        "crossed_before_correction",
        "violation",
    ])
    .map_err(err)?;
    for r in results {
        let (tau, sgp, bracket, clamped) = match &r.score {
            Some(s) => (
                format!("{}", s.tau_hat),
                s.sgp_1_99().to_string(),
                match s.bracket {
                    Bracket::Between(k) => format!("{k}"),
                    Bracket::BelowRange => "below".into(),
                    Bracket::AboveRange => "above".into(),
                },
                s.clamped.to_string(),
            ),
            None => (String::new(), String::new(), "crossing".into(), String::new()),
        };
        w.write_record([
            r.id.clone(),
            tau,
            sgp,
            bracket,
            clamped,
            r.crossed_before_correction.to_string(),
            format!("{}", r.violation),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| CliError::input(e.to_string()))
}

pub fn run(args: &SgpArgs) -> Result<i32, CliError> {
    let file = FileConfig::load_opt(args.common.config.as_deref())?;
    let data = args
        .data
        .clone()
        .or_else(|| file.data.clone())
        .ok_or_else(|| CliError::input("--data is required"))?;
    let policy: Policy = args
        .policy
        .as_deref()
        .or(file.policy.as_deref())
        .unwrap_or("rearrange")
        .parse()?;
    let model_file = ModelFile::load(&args.model)?;
    let model = model_file.to_model()?;
    let students = read_students(&data, &model_file)?;
    let (results, summary) = sgp::sgp_batch(&model, &students, policy)?;

    let dir = crate::out_dir(&args.common.out_dir, &file.out_dir)?;
    write_scores(&dir.join("scores.csv"), &results)?;
    let report = SgpReport {
        tool_version: TOOL_VERSION.into(),
        method: model_file.method,
        summary,
        config_hash: settings_hash(&SgpSettings {
            model: &args.model,
            data: &data,
            policy: policy.label(),
        }),
    };
    crate::write_json(&dir.join("sgp_summary.json"), &report)?;
    println!(
        "scored {} students under {}: {} crossed before correction, {} clamped",
        report.summary.n, report.summary.policy, report.summary.n_crossed, report.summary.n_clamped
    );
    Ok(EXIT_OK)
}
