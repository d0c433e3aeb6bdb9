use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use dsrefine::corpus::load_examples;
use dsrefine::dsrnet::dsrnet_forward;
use dsrefine::enhance::{apply_mask, estimate_mask};
use dsrefine::mixer::read_manifest;
use dsrefine::signal::{magnitude, stft, StftConfig};
use dsrefine::wav::read_wav;
use dsrefine::Execution;
use ndarray::Array2;
use serde::Serialize;

use crate::common::{load_dsrnet, load_estimator, usage, Magnitude};
use crate::render;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Noisy,
    Clean,
    Enhanced,
    Refined,
}

#[derive(Args, Debug, Serialize)]
pub struct SpectrogramArgs {
    /// Render a WAV file
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
    pub wav: Option<PathBuf>,
    /// Render one row of a corpus manifest
    #[arg(long, requires = "row")]
    pub manifest: Option<PathBuf>,
    /// Utterance id or zero-based index of the manifest row
    #[arg(long, alias = "manifest-row", requires = "manifest")]
    pub row: Option<String>,
    #[arg(long, value_enum, default_value_t = Stage::Noisy)]
    pub stage: Stage,
    /// Front-end checkpoint, needed for `enhanced` and `refined`
    #[arg(long)]
    pub se_ckpt: Option<PathBuf>,
    /// Refine network checkpoint, needed for `refined`
    #[arg(long)]
    pub dsrnet_ckpt: Option<PathBuf>,
    /// Noisy magnitude construction for manifest rows
    #[arg(long, value_enum, default_value_t = Magnitude::Waveform)]
    pub magnitude: Magnitude,
    /// Output image; `.pgm` or `.png`
    #[arg(long)]
    pub out: PathBuf,
}

/// Noisy and (for manifest rows) clean magnitudes.
fn inputs(args: &SpectrogramArgs) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
    if let Some(wav) = &args.wav {
        let w = read_wav(wav).with_context(|| format!("reading {}", wav.display()))?;
        return Ok((magnitude(&stft(&w, StftConfig::default())?).into_frames(), None));
    }
    let path = args.manifest.as_ref().expect("clap requires --wav or --manifest");
    let key = args.row.as_deref().expect("clap requires --row with --manifest");
    let rows = read_manifest(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let row = rows
        .iter()
        .find(|r| r.utt_id == key)
        .or_else(|| key.parse::<usize>().ok().and_then(|i| rows.get(i)))
        .ok_or_else(|| usage(format!("no manifest row {key:?}")))?;
    let ex = load_examples(std::slice::from_ref(row), StftConfig::default(), args.magnitude.into(), Execution::Sequential)?
        .pop()
        .expect("one row in, one example out");
    Ok((ex.noisy.into_frames(), Some(ex.clean.into_frames())))
}

pub fn run(args: &SpectrogramArgs) -> Result<()> {
    let needs_se = matches!(args.stage, Stage::Enhanced | Stage::Refined);
    if needs_se && args.se_ckpt.is_none() {
        let name = if args.stage == Stage::Enhanced { "enhanced" } else { "refined" };
        return Err(usage(format!("stage {name} needs --se-ckpt")));
    }
    if args.stage == Stage::Refined && args.dsrnet_ckpt.is_none() {
        return Err(usage("stage refined needs --dsrnet-ckpt"));
    }
    if args.stage == Stage::Clean && args.wav.is_some() {
        return Err(usage("stage clean needs a manifest row"));
    }
    let se = args.se_ckpt.as_deref().filter(|_| needs_se).map(load_estimator).transpose()?;
    let ds = args
        .dsrnet_ckpt
        .as_deref()
        .filter(|_| args.stage == Stage::Refined)
        .map(load_dsrnet)
        .transpose()?;

    let (noisy, clean) = inputs(args)?;
    let frames = match (args.stage, se) {
        (Stage::Noisy, _) => noisy,
        (Stage::Clean, _) => clean.expect("manifest rows carry the clean magnitude"),
        (stage, Some(se)) => {
            let (mask, _) = estimate_mask(&se, &noisy)?;
            let pair = apply_mask(&mask, &noisy)?;
            match (stage, ds) {
                (Stage::Refined, Some(ds)) => dsrnet_forward(&ds, &pair)?.1.s_tilde,
                _ => pair.s_hat,
            }
        }
        (_, None) => unreachable!("checked above"),
    };
    let img = render::render(&frames);
    render::save(&img, &args.out)?;
    log::info!("{}x{} image", img.width, img.height);
    println!("{}", args.out.display());
    Ok(())
}
