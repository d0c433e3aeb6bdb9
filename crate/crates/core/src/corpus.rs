//! In-memory utterances used by training and evaluation.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::exec::{map_indexed, map_ordered, Execution};
use crate::mixer::{mix_at_snr, row_waveforms, triplet_from_waveforms, utterance_seed, MagnitudeMode, Manifest, SnrMode};
use crate::signal::{phase, stft, MagnitudeSpectrogram, StftConfig, Waveform};
use crate::synth::{self, NoiseKind};

#[derive(Clone, Debug)]
pub struct Example {
    pub utt_id: String,
    pub snr_db: f64,
    pub noisy: MagnitudeSpectrogram,
    pub clean: MagnitudeSpectrogram,
    pub noise: MagnitudeSpectrogram,
    /// Phase of the actual waveform mixture; used for resynthesis.
    pub noisy_phase: Array2<f64>,
    pub clean_wave: Waveform,
    pub mixture_wave: Waveform,
}

impl Example {
    pub fn from_waveforms(
        utt_id: impl Into<String>,
        snr_db: f64,
        clean: Waveform,
        scaled_noise: &Waveform,
        cfg: StftConfig,
        mode: MagnitudeMode,
    ) -> Result<Self> {
        let t = triplet_from_waveforms(&clean, scaled_noise, cfg, mode)?;
        let mixed: Vec<f64> = clean
            .samples()
            .iter()
            .zip(scaled_noise.samples())
            .map(|(a, b)| a + b)
            .collect();
        let mixture_wave = Waveform::new(mixed, clean.sample_rate())?;
        let noisy_phase = phase(&stft(&mixture_wave, cfg)?);
        Ok(Self {
            utt_id: utt_id.into(),
            snr_db,
            noisy: t.noisy,
            clean: t.clean,
            noise: t.noise,
            noisy_phase,
            clean_wave: clean,
            mixture_wave,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.noisy.n_frames()
    }

    pub fn n_bins(&self) -> usize {
        self.noisy.n_bins()
    }
}

pub fn load_examples(
    rows: &[Manifest],
    cfg: StftConfig,
    mode: MagnitudeMode,
    exec: Execution,
) -> Result<Vec<Example>> {
    map_ordered(exec, rows, |row| {
        let (clean, noise) = row_waveforms(row)?;
        Example::from_waveforms(row.utt_id.clone(), row.snr_db, clean, &noise, cfg, mode)
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpusConfig {
    pub n_utterances: usize,
    pub seconds: f64,
    pub sample_rate: u32,
    pub snr_mode: SnrMode,
    pub seed: u64,
    pub stft: StftConfig,
    pub mode: MagnitudeMode,
    /// Prefix for generated utterance ids.
    pub prefix: String,
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        Self {
            n_utterances: 20,
            seconds: 0.5,
            sample_rate: 16000,
            snr_mode: SnrMode::standard_random(),
            seed: 0,
            stft: StftConfig::default(),
            mode: MagnitudeMode::Synthetic,
            prefix: "syn".into(),
        }
    }
}

/// One synthetic speech-like utterance per id, mixed with a random noise
/// family at an SNR drawn per utterance from `snr_mode`.
pub fn synthetic_corpus(cfg: &SyntheticCorpusConfig, exec: Execution) -> Result<Vec<Example>> {
    let len = (cfg.seconds * cfg.sample_rate as f64).round() as usize;
    map_indexed(exec, cfg.n_utterances, |i| {
        let utt_id = format!("{}{:04}", cfg.prefix, i);
        let mut rng = ChaCha8Rng::seed_from_u64(utterance_seed(cfg.seed, &utt_id));
        let snr_db = match &cfg.snr_mode {
            SnrMode::Fixed(x) => *x,
            SnrMode::Randomized(set) => *set.choose(&mut rng).expect("non-empty SNR set"),
        };
        let kind = *NoiseKind::ALL.choose(&mut rng).expect("non-empty");
        let clean = synth::speech_like(&mut rng, cfg.sample_rate, len)?;
        let noise = synth::noise(&mut rng, kind, cfg.sample_rate, len)?;
        let (_, scaled) = mix_at_snr(&clean, &noise, snr_db, 0)?;
        Example::from_waveforms(utt_id, snr_db, clean, &scaled, cfg.stft, cfg.mode)
    })
    .into_iter()
    .collect()
}
