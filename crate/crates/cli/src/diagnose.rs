use std::path::PathBuf;

use clap::Args;
use qlab_core::cjqr::{verify_noncrossing, ViolationReport};
use qlab_core::isotonize::{quantile_property_gap, CoverageRow};
use qlab_core::mqgd::{crossing_rate, intercept_grid};
use qlab_core::{Correction, Dataset, Method, NumericTable};
use serde::Serialize;

use crate::config::FileConfig;
use crate::model_file::ModelFile;
use crate::{CliError, CommonArgs, EXIT_OK, TOOL_VERSION};

/// Points in the covariate-range grid used for the crossing rate.
pub const GRID_POINTS: usize = 101;

#[derive(Debug, Clone, Default, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with the model's covariate and response columns.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridCrossing {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnoseReport {
    pub tool_version: String,
    pub method: Method,
    pub n: usize,
    pub rearrange: Vec<CoverageRow>,
    pub pav: Vec<CoverageRow>,
    pub training_crossings: ViolationReport,
    /// Only for a single covariate.
    pub grid_crossing: Option<GridCrossing>,
}

pub fn dataset_for(model: &ModelFile, table: &NumericTable) -> Result<Dataset, CliError> {
    let (xs, ys) = table.select(model.covariates(), &model.response)?;
    let names: Vec<&str> = model.covariates().iter().map(String::as_str).collect();
    Ok(Dataset::from_rows(&xs, ys, &names, model.intercept)?)
}

pub fn diagnose(model_file: &ModelFile, ds: &Dataset) -> Result<DiagnoseReport, CliError> {
    let model = model_file.to_model()?;
    let grid_crossing = if model_file.covariates().len() == 1 && model_file.intercept {
        let col = ds.x().column(1);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let rate = crossing_rate(&model, &intercept_grid(lo, hi, GRID_POINTS))?;
        Some(GridCrossing { lo, hi, points: GRID_POINTS, rate })
    } else {
        None
    };
    Ok(DiagnoseReport {
        tool_version: TOOL_VERSION.into(),
        method: model_file.method,
        n: ds.n(),
        rearrange: quantile_property_gap(&model, ds, Correction::Rearrange)?,
        pav: quantile_property_gap(&model, ds, Correction::Pav)?,
        training_crossings: verify_noncrossing(&model, ds, 1e-9)?,
        grid_crossing,
    })
}

pub fn run(args: &DiagnoseArgs) -> Result<i32, CliError> {
    let file = FileConfig::load_opt(args.common.config.as_deref())?;
    let data = args
        .data
        .clone()
        .or_else(|| file.data.clone())
        .ok_or_else(|| CliError::input("--data is required"))?;
    let model_file = ModelFile::load(&args.model)?;
    let ds = dataset_for(&model_file, &NumericTable::from_path(&data)?)?;
    let report = diagnose(&model_file, &ds)?;

    let dir = crate::out_dir(&args.common.out_dir, &file.out_dir)?;
    crate::write_json(&dir.join("diagnose.json"), &report)?;
    let mut w = csv::Writer::from_writer(crate::create_file(&dir.join("coverage.csv"))?);
    let err = |e: csv::Error| CliError::input(e.to_string());
    w.write_record(["correction", "tau", "coverage_raw", "gap_raw", "coverage_corrected", "gap_corrected"])
        .map_err(err)?;
    for (name, rows) in [("rearrange", &report.rearrange), ("pav", &report.pav)] {
        for r in rows {
            w.write_record([
                name.to_string(),
                format!("{}", r.tau),
                format!("{}", r.coverage_raw),
                format!("{}", r.gap_raw),
                format!("{}", r.coverage_corrected),
                format!("{}", r.gap_corrected),
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| CliError::input(e.to_string()))?;

    println!("{:>8} {:>10} {:>10} {:>10}", "tau", "raw", "rearrange", "pav");
    for (a, b) in report.rearrange.iter().zip(&report.pav) {
        println!(
            "{:>8.4} {:>10.4} {:>10.4} {:>10.4}",
            a.tau, a.coverage_raw, a.coverage_corrected, b.coverage_corrected
        );
    }
    println!("training-row crossings: {}", report.training_crossings.count);
    if let Some(g) = &report.grid_crossing {
        println!("grid crossing rate on [{}, {}]: {}", g.lo, g.hi, g.rate);
    }
    Ok(EXIT_OK)
}
