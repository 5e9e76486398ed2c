use std::path::{Path, PathBuf};

use clap::Args;
use qlab_core::cjqr::{self, JointLpStats, JointOptions, ViolationReport};
use qlab_core::lp::SolveOptions;
use qlab_core::mqgd::{self, MqgdConfig, StopReason};
use qlab_core::{qr, Dataset, Method, NumericTable, QuantileModel, TauGrid};
use serde::Serialize;

use crate::config::{settings_hash, FileConfig};
use crate::model_file::{coef_rows, ModelFile};
use crate::{CliError, CommonArgs, EXIT_OK, TOOL_VERSION};

#[derive(Debug, Clone, Default, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Headed numeric CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Response column; defaults to the last column.
    #[arg(long)]
    pub response: Option<String>,
    /// Fit without an intercept column.
    #[arg(long)]
    pub no_intercept: bool,
    /// independent | cjqr | mqgd
    #[arg(long)]
    pub method: Option<String>,
    /// Comma-separated levels, or "sgp" for 0.01..0.99.
    #[arg(long)]
    pub taus: Option<String>,
    /// MQGD iteration cap.
    #[arg(long)]
    pub max_iters: Option<usize>,
}

/// Settings after merging flags, config file and defaults. Hashed into reports.
#[derive(Debug, Clone, Serialize)]
pub struct FitSettings {
    pub data: PathBuf,
    pub response: Option<String>,
    pub intercept: bool,
    pub method: Method,
    pub taus: TauGrid,
    pub seed: u64,
    pub mqgd: Option<MqgdConfig>,
    pub max_nq: Option<usize>,
}

impl FitSettings {
    pub fn resolve(args: &FitArgs, file: &FileConfig) -> Result<Self, CliError> {
        let data = args
            .data
            .clone()
            .or_else(|| file.data.clone())
            .ok_or_else(|| CliError::input("--data is required"))?;
        let method: Method = args
            .method
            .as_deref()
            .or(file.method.as_deref())
            .unwrap_or("independent")
            .parse()?;
        let taus = TauGrid::parse(args.taus.as_deref().or(file.taus.as_deref()).unwrap_or("0.1,0.15"))?;
        let seed = args.common.seed.or(file.seed).unwrap_or(MqgdConfig::default().seed);
        let mqgd = (method == Method::MQGD)
            .then(|| mqgd_config(file, seed, args.max_iters))
            .transpose()?;
        Ok(FitSettings {
            data,
            response: args.response.clone().or_else(|| file.response.clone()),
            intercept: !args.no_intercept && file.intercept.unwrap_or(true),
            method,
            taus,
            seed,
            mqgd,
            max_nq: (method == Method::CJQR).then(|| file.max_nq.unwrap_or(JointOptions::default().max_nq)),
        })
    }
}

pub(crate) fn mqgd_config(file: &FileConfig, seed: u64, max_iters: Option<usize>) -> Result<MqgdConfig, CliError> {
    let d = MqgdConfig::default();
    let cfg = MqgdConfig {
        hidden_units: file.hidden_units.unwrap_or(d.hidden_units),
        max_iters: max_iters.or(file.max_iters).unwrap_or(d.max_iters),
        patience: file.patience.unwrap_or(d.patience),
        min_improvement: file.min_improvement.unwrap_or(d.min_improvement),
        seed,
        optimizer: match &file.optimizer {
            Some(s) => s.parse()?,
            None => d.optimizer,
        },
        learning_rate: file.learning_rate.unwrap_or(d.learning_rate),
        history: file.history.unwrap_or(d.history),
        grad_tol: file.grad_tol.unwrap_or(d.grad_tol),
    };
    if cfg.hidden_units != 0 {
        return Err(CliError::input("model files hold linear models; hidden_units must be 0"));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Loads a headed CSV, taking the last column as the response unless one is named.
pub fn load_dataset(path: &Path, response: Option<&str>, intercept: bool) -> Result<Dataset, CliError> {
    let table = NumericTable::from_path(path)?;
    let response = match response {
        Some(r) => r.to_string(),
        None => table
            .headers
            .last()
            .cloned()
            .ok_or_else(|| CliError::input("data file has no columns"))?,
    };
    Ok(table.into_dataset(&response, intercept)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainingSummary {
    pub final_loss: f64,
    pub stop_reason: StopReason,
    pub stopped_at: usize,
    pub evaluations: usize,
    pub separable_floor: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub tool_version: String,
    pub method: Method,
    pub n: usize,
    pub p: usize,
    pub taus: TauGrid,
    /// Check loss per level, summed over rows.
    pub fit_loss: Vec<f64>,
    pub total_loss: f64,
    /// Crossings among adjacent levels on the training rows.
    pub training_crossings: ViolationReport,
    pub joint_lp: Option<JointLpStats>,
    pub training: Option<TrainingSummary>,
    pub seed: u64,
    pub config_hash: String,
}

pub struct FitOutput {
    pub model: QuantileModel,
    pub report: FitReport,
    pub trace: Option<mqgd::TrainingTrace>,
}

pub fn fit_dataset(ds: &Dataset, settings: &FitSettings) -> Result<FitOutput, CliError> {
    let taus = &settings.taus;
    let mut joint_lp = None;
    let mut training = None;
    let mut trace = None;
    let model = match settings.method {
        Method::IndependentQR => qr::fit_independent(ds, taus, &SolveOptions::default())?,
        Method::CJQR => {
            let opts = JointOptions {
                max_nq: settings.max_nq.unwrap_or(JointOptions::default().max_nq),
                ..Default::default()
            };
            let fit = cjqr::fit_joint(ds, taus, &opts)?;
            joint_lp = Some(fit.stats);
            fit.model
        }
        Method::MQGD => {
            let cfg = settings.mqgd.clone().unwrap_or_default();
            let (model, tr) = mqgd::fit(ds, taus, &cfg)?;
            training = Some(TrainingSummary {
                final_loss: tr.final_loss(),
                stop_reason: tr.stop_reason,
                stopped_at: tr.stopped_at,
                evaluations: tr.evaluations,
                separable_floor: mqgd::separable_floor(ds, taus, &SolveOptions::default())?,
            });
            trace = Some(tr);
            model
        }
    };
    let report = FitReport {
        tool_version: TOOL_VERSION.into(),
        method: settings.method,
        n: ds.n(),
        p: ds.p(),
        taus: taus.clone(),
        fit_loss: model.fit_loss().to_vec(),
        total_loss: model.fit_loss().iter().sum(),
        training_crossings: cjqr::verify_noncrossing(&model, ds, 1e-9)?,
        joint_lp,
        training,
        seed: settings.seed,
        config_hash: settings_hash(settings),
    };
    Ok(FitOutput { model, report, trace })
}

pub fn run(args: &FitArgs) -> Result<i32, CliError> {
    let file = FileConfig::load_opt(args.common.config.as_deref())?;
    let settings = FitSettings::resolve(args, &file)?;
    let ds = load_dataset(&settings.data, settings.response.as_deref(), settings.intercept)?;
    let out = fit_dataset(&ds, &settings)?;
    let dir = crate::out_dir(&args.common.out_dir, &file.out_dir)?;

    let model_file = ModelFile {
        tool_version: TOOL_VERSION.into(),
        method: settings.method,
        taus: settings.taus.clone(),
        feature_names: ds.feature_names().to_vec(),
        response: ds.response_name().to_string(),
        intercept: ds.has_intercept(),
        coef: coef_rows(&out.model),
        fit_loss: out.model.fit_loss().to_vec(),
        seed: (settings.method == Method::MQGD).then_some(settings.seed),
        config_hash: out.report.config_hash.clone(),
    };
    model_file.save(&dir.join("model.json"))?;
    crate::write_json(&dir.join("fit_report.json"), &out.report)?;
    if let Some(trace) = &out.trace {
        trace.write_csv(crate::create_file(&dir.join("trace.csv"))?)?;
    }
    println!(
        "{} fit on {} rows, {} levels: total loss {:.6}, {} training crossings -> {}",
        settings.method,
        ds.n(),
        settings.taus.len(),
        out.report.total_loss,
        out.report.training_crossings.count,
        dir.join("model.json").display()
    );
    Ok(EXIT_OK)
}
