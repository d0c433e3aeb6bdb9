use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use dsrefine::loss::JointLossConfig;
use dsrefine::train::{sweep_alpha, write_sweep_csv, Regime};
use dsrefine::Execution;
use serde::Serialize;

use crate::common::{DataArgs, ModelArgs, OptimArgs};

#[derive(Args, Debug, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub optim: OptimArgs,
    /// Enhancement-loss weights to try
    #[arg(long, value_delimiter = ',', default_value = "1,50,100,200,300,400")]
    pub alphas: Vec<f64>,
    /// Shared starting point for every run
    #[arg(long)]
    pub se_ckpt_in: Option<PathBuf>,
    /// CSV table, one row per weight
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &SweepArgs, exec: Execution) -> Result<()> {
    let cfg = args.optim.train_config(Regime::Joint, exec);
    log::info!("train config: {cfg:?}");
    let examples = args.data.load(exec)?;
    let se = args.model.estimator(args.se_ckpt_in.as_deref(), &mut args.optim.rng())?;
    let rows = sweep_alpha(&examples, &args.alphas, &se, &cfg, &JointLossConfig::default())?;
    write_sweep_csv(&args.out, &rows)?;
    println!("{:>8} {:>16} {:>16}", "alpha", "proxy_loss", "l_enh");
    for r in &rows {
        println!("{:>8} {:>16.6e} {:>16.6e}", r.alpha, r.final_proxy_loss, r.final_l_enh);
    }
    Ok(())
}
