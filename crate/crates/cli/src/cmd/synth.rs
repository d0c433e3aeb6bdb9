use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use dsrefine::synth::{write_noise_pool, write_speech_pool};
use serde::Serialize;

#[derive(Args, Debug, Serialize)]
pub struct SynthArgs {
    /// Receives `clean/` and `noise/` subdirectories
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Number of speech-like utterances
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    /// Utterance length in seconds
    #[arg(long, default_value_t = 1.0)]
    pub seconds: f64,
    /// Length of each noise file in seconds
    #[arg(long, default_value_t = 4.0)]
    pub noise_seconds: f64,
    #[arg(long, default_value_t = 16000)]
    pub sample_rate: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(args: &SynthArgs) -> Result<()> {
    let clean = args.out_dir.join("clean");
    let noise = args.out_dir.join("noise");
    let speech = write_speech_pool(&clean, "utt", args.count, args.seconds, args.sample_rate, args.seed)?;
    let noises = write_noise_pool(&noise, args.noise_seconds, args.sample_rate, args.seed.wrapping_add(1))?;
    log::info!("wrote {} speech and {} noise files", speech.len(), noises.len());
    println!("{}", clean.display());
    println!("{}", noise.display());
    Ok(())
}
