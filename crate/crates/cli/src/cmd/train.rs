use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, ValueEnum};
use dsrefine::checkpoint::save_checkpoint;
use dsrefine::dsrnet::{DsrnetInit, DsrnetParams};
use dsrefine::loss::write_trace_csv;
use dsrefine::signal::StftConfig;
use dsrefine::train::{train_joint, train_se, Regime};
use dsrefine::Execution;
use serde::Serialize;

use crate::common::{create_dir, load_dsrnet, usage, DataArgs, LossArgs, ModelArgs, OptimArgs};

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeArg {
    /// Front end alone on the enhancement loss
    Se,
    /// Refine network on a fixed front end
    Frozen,
    /// Front end and refine network together
    Joint,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitArg {
    /// Random inner maps, zero outer map: starts as the identity
    ZeroOuter,
    Random,
    Zeros,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub loss: LossArgs,
    #[arg(long, value_enum, default_value_t = RegimeArg::Joint)]
    pub regime: RegimeArg,
    /// Start the front end from this checkpoint (required for `frozen`)
    #[arg(long)]
    pub se_ckpt_in: Option<PathBuf>,
    /// Start the refine network from this checkpoint
    #[arg(long)]
    pub dsrnet_ckpt_in: Option<PathBuf>,
    /// Refine network initialisation when no checkpoint is given
    #[arg(long, value_enum, default_value_t = InitArg::ZeroOuter)]
    pub dsrnet_init: InitArg,
    /// Share the inner maps between the speech and noise streams
    #[arg(long)]
    pub shared_inner: bool,
    /// Output directory for `se.ckpt`, `dsrnet.ckpt` and `trace.csv`
    #[arg(long)]
    pub ckpt_out: PathBuf,
}

pub fn run(args: &TrainArgs, exec: Execution) -> Result<()> {
    if matches!(args.regime, RegimeArg::Frozen) && args.se_ckpt_in.is_none() {
        return Err(usage("--regime frozen needs --se-ckpt-in"));
    }
    let loss_cfg = args.loss.loss_config()?;
    let regime = match args.regime {
        RegimeArg::Frozen => Regime::Frozen,
        _ => Regime::Joint,
    };
    let cfg = args.optim.train_config(regime, exec);
    log::info!("train config: {cfg:?}");
    log::info!("loss config: {loss_cfg:?}");

    let examples = args.data.load(exec)?;
    log::info!("loaded {} utterances", examples.len());
    let mut rng = args.optim.rng();
    let mut se = args.model.estimator(args.se_ckpt_in.as_deref(), &mut rng)?;
    create_dir(&args.ckpt_out)?;

    let (report, ds) = match args.regime {
        RegimeArg::Se => (train_se(&examples, &mut se, &cfg)?, None),
        RegimeArg::Frozen | RegimeArg::Joint => {
            let mut ds = match &args.dsrnet_ckpt_in {
                Some(p) => load_dsrnet(p)?,
                None => {
                    let init = match args.dsrnet_init {
                        InitArg::ZeroOuter => DsrnetInit::ZeroOuter,
                        InitArg::Random => DsrnetInit::Random,
                        InitArg::Zeros => DsrnetInit::Zeros,
                    };
                    DsrnetParams::init(StftConfig::default().bins(), init, args.shared_inner, &mut rng)
                }
            };
            let report = train_joint(&examples, &mut se, Some(&mut ds), &cfg, &loss_cfg)?;
            (report, Some(ds))
        }
    };

    let steps = report.steps();
    let se_path = args.ckpt_out.join("se.ckpt");
    save_checkpoint(&se_path, &se, args.optim.seed, steps)?;
    println!("{}", se_path.display());
    if let Some(ds) = &ds {
        let ds_path = args.ckpt_out.join("dsrnet.ckpt");
        save_checkpoint(&ds_path, ds, args.optim.seed, steps)?;
        println!("{}", ds_path.display());
    }
    let trace_path = args.ckpt_out.join("trace.csv");
    write_trace_csv(&trace_path, &report.trace)?;
    println!("{}", trace_path.display());
    log::info!(
        "{steps} steps in {:.1} s, corpus loss {:.6} -> {:.6}",
        report.wall_seconds,
        report.initial_loss,
        report.final_loss
    );
    Ok(())
}
