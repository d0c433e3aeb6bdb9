use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use dsrefine::eval::{evaluate, MaskSource};
use dsrefine::Execution;
use serde::Serialize;

use crate::common::{load_dsrnet, load_estimator, DataArgs};

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Front-end checkpoint
    #[arg(long, required_unless_present = "oracle", conflicts_with = "oracle")]
    pub se_ckpt: Option<PathBuf>,
    /// Use the ideal ratio mask instead of a trained front end
    #[arg(long)]
    pub oracle: bool,
    /// Refine network checkpoint; without it the refined output equals the enhanced one
    #[arg(long)]
    pub dsrnet_ckpt: Option<PathBuf>,
    /// Per-utterance CSV report
    #[arg(long)]
    pub report_out: PathBuf,
    /// Per-SNR summary CSV
    #[arg(long)]
    pub summary_out: Option<PathBuf>,
}

pub fn run(args: &EvalArgs, exec: Execution) -> Result<()> {
    let se = args.se_ckpt.as_deref().map(load_estimator).transpose()?;
    let ds = args.dsrnet_ckpt.as_deref().map(load_dsrnet).transpose()?;
    let examples = args.data.load(exec)?;
    let mask = match &se {
        Some(p) => MaskSource::Estimator(p),
        None => MaskSource::Oracle,
    };
    let report = evaluate(&examples, mask, ds.as_ref(), exec)?;
    report.write_csv(&args.report_out)?;
    if let Some(p) = &args.summary_out {
        report.write_summary_csv(p)?;
    }
    println!(
        "{:>6} {:>5} {:>14} {:>14} {:>10} {:>10}",
        "snr", "count", "mse_enhanced", "mse_refined", "sisnr_enh", "sisnr_ref"
    );
    for s in report.by_snr() {
        println!(
            "{:>6} {:>5} {:>14.6e} {:>14.6e} {:>10.3} {:>10.3}",
            s.group, s.count, s.spectral_mse_enhanced, s.spectral_mse_refined, s.si_snr_enhanced, s.si_snr_refined
        );
    }
    Ok(())
}
