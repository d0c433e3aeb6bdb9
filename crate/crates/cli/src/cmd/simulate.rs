use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use dsrefine::mixer::{simulate_corpus_with, MixSpec, NoiseSelection, SnrMode, MANIFEST_FILE};
use dsrefine::Execution;
use serde::Serialize;

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    /// Directory of clean speech WAV files
    #[arg(long)]
    pub clean_dir: PathBuf,
    /// Directory of noise WAV files
    #[arg(long)]
    pub noise_dir: PathBuf,
    /// Output directory for mixtures and the manifest
    #[arg(long)]
    pub out_dir: PathBuf,
    /// `random` for the standard grid, one value for a fixed SNR, or a comma list to draw from
    #[arg(long, default_value = "random", value_parser = check_snr, allow_hyphen_values = true)]
    pub snr: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use this noise file (by sorted position) for every utterance instead of a random pick
    #[arg(long)]
    pub noise_index: Option<usize>,
}

pub fn parse_snr(s: &str) -> std::result::Result<SnrMode, String> {
    if s == "random" {
        return Ok(SnrMode::standard_random());
    }
    let values = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("bad SNR value {v:?}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err("SNR values must be finite".into());
    }
    Ok(match values.as_slice() {
        [one] => SnrMode::Fixed(*one),
        _ => SnrMode::Randomized(values),
    })
}

fn check_snr(s: &str) -> std::result::Result<String, String> {
    parse_snr(s).map(|_| s.to_string())
}

pub fn run(args: &SimulateArgs, exec: Execution) -> Result<()> {
    let spec = MixSpec {
        snr_mode: parse_snr(&args.snr).map_err(crate::common::usage)?,
        seed: args.seed,
        noise_selection: args.noise_index.map_or(NoiseSelection::Randomized, NoiseSelection::Index),
    };
    let rows = simulate_corpus_with(&args.clean_dir, &args.noise_dir, &spec, &args.out_dir, exec)?;
    let manifest = args.out_dir.join(MANIFEST_FILE);
    log::info!("simulated {} mixtures", rows.len());
    println!("{}", manifest.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_forms() {
        assert_eq!(parse_snr("random"), Ok(SnrMode::standard_random()));
        assert_eq!(parse_snr("-5"), Ok(SnrMode::Fixed(-5.0)));
        assert_eq!(parse_snr("0, 5"), Ok(SnrMode::Randomized(vec![0.0, 5.0])));
        assert!(parse_snr("loud").is_err());
        assert!(parse_snr("inf").is_err());
    }
}
