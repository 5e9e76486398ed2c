use clap::Args;
use qlab_core::bench::{scaling_run, BenchMethod, BenchOptions, ScalingTable};
use qlab_core::cjqr::JointOptions;
use serde::Serialize;

use crate::config::{settings_hash, FileConfig};
use crate::{CliError, CommonArgs, EXIT_OK, TOOL_VERSION};

pub const DEFAULT_N: [usize; 3] = [50, 100, 200];
pub const DEFAULT_Q: [usize; 4] = [2, 3, 4, 6];

#[derive(Debug, Clone, Default, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// independent | cjqr | mqgd; all three when omitted.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub n_list: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub q_list: Option<Vec<usize>>,
    #[arg(long)]
    pub repeats: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchSettings {
    pub methods: Vec<BenchMethod>,
    pub n_list: Vec<usize>,
    pub q_list: Vec<usize>,
    pub options: BenchOptions,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub tables: Vec<ScalingTable>,
}

pub fn resolve(args: &BenchArgs, file: &FileConfig) -> Result<BenchSettings, CliError> {
    let methods = match args.method.as_deref().or(file.method.as_deref()) {
        Some(m) => vec![m.parse::<BenchMethod>()?],
        None => vec![BenchMethod::Independent, BenchMethod::Cjqr, BenchMethod::Mqgd],
    };
    let d = BenchOptions::default();
    Ok(BenchSettings {
        methods,
        n_list: args.n_list.clone().or_else(|| file.n_list.clone()).unwrap_or(DEFAULT_N.to_vec()),
        q_list: args.q_list.clone().or_else(|| file.q_list.clone()).unwrap_or(DEFAULT_Q.to_vec()),
        options: BenchOptions {
            repeats: args.repeats.or(file.repeats).unwrap_or(d.repeats),
            seed: args.common.seed.or(file.seed).unwrap_or(d.seed),
            mqgd_iters: file.mqgd_iters.unwrap_or(d.mqgd_iters),
            joint: JointOptions {
                max_nq: file.max_nq.unwrap_or(d.joint.max_nq),
                ..d.joint
            },
        },
    })
}

pub fn run(args: &BenchArgs) -> Result<i32, CliError> {
    let file = FileConfig::load_opt(args.common.config.as_deref())?;
    let settings = resolve(args, &file)?;
    let dir = crate::out_dir(&args.common.out_dir, &file.out_dir)?;
    let mut tables = Vec::new();
    for &m in &settings.methods {
        let table = scaling_run(m, &settings.n_list, &settings.q_list, &settings.options)?;
        table.write_csv(crate::create_file(&dir.join(format!("bench_{m}.csv")))?)?;
        for s in &table.slopes_in_n {
            println!("{m}: slope in n at q = {} is {:.3}", s.fixed, s.slope);
        }
        for s in &table.slopes_in_q {
            println!("{m}: slope in q at n = {} is {:.3}", s.fixed, s.slope);
        }
        tables.push(table);
    }
    let report = BenchReport {
        tool_version: TOOL_VERSION.into(),
        seed: settings.options.seed,
        config_hash: settings_hash(&settings),
        tables,
    };
    crate::write_json(&dir.join("bench.json"), &report)?;
    Ok(EXIT_OK)
}
