//! `qlab` command-line front end: fit, score, diagnose, benchmark and reproduce.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub mod bench_cmd;
pub mod config;
pub mod diagnose;
pub mod fit;
pub mod model_file;
pub mod reproduce;
pub mod score;

pub const TOOL_VERSION: &str = concat!("qlab ", env!("CARGO_PKG_VERSION"));

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_ACCEPTANCE: i32 = 4;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "QLAB_THREADS";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError { code: EXIT_INPUT, message: message.into() }
    }

    pub fn solver(message: impl Into<String>) -> Self {
        CliError { code: EXIT_SOLVER, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<qlab_core::Error> for CliError {
    fn from(e: qlab_core::Error) -> Self {
        use qlab_core::Error as E;
        let code = match e {
            E::Solver { .. } | E::Training { .. } => EXIT_SOLVER,
            _ => EXIT_INPUT,
        };
        CliError { code, message: e.to_string() }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qlab", version, about = "Multi-level quantile regression with crossing diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a quantile model and write model.json plus fit_report.json.
    Fit(fit::FitArgs),
    /// Score students against a saved model.
    Sgp(score::SgpArgs),
    /// Coverage and crossing tables for a saved model on a dataset.
    Diagnose(diagnose::DiagnoseArgs),
    /// Runtime scaling tables on synthetic data.
    Bench(bench_cmd::BenchArgs),
    /// Rerun the 20-row worked example and check it against the reference values.
    Reproduce(reproduce::ReproduceArgs),
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Flat TOML config; flags given on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return e.code;
    }
    let result = match cli.command {
        Command::Fit(a) => fit::run(&a),
        Command::Sgp(a) => score::run(&a),
        Command::Diagnose(a) => diagnose::run(&a),
        Command::Bench(a) => bench_cmd::run(&a),
        Command::Reproduce(a) => reproduce::run(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::input(format!("{THREADS_ENV} must be a positive integer, got '{raw}'")))?;
    // A pool may already exist when called repeatedly in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub(crate) fn out_dir(flag: &Option<PathBuf>, file: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = flag.clone().or_else(|| file.clone()).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::input(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::input(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

pub(crate) fn create_file(path: &Path) -> Result<std::fs::File, CliError> {
    std::fs::File::create(path).map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}
