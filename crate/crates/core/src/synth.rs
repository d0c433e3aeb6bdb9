//! Deterministic synthetic sources for desk-scale experiments: voiced,
//! formant-shaped harmonic signals standing in for speech, and a few
//! colored noise families.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mixer::utterance_seed;
use crate::signal::Waveform;
use crate::wav::write_wav;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    Brown,
    Hum,
    Babble,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 4] = [NoiseKind::White, NoiseKind::Brown, NoiseKind::Hum, NoiseKind::Babble];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Brown => "brown",
            NoiseKind::Hum => "hum",
            NoiseKind::Babble => "babble",
        }
    }
}

fn formant_gain(hz: f64, formants: &[(f64, f64)]) -> f64 {
    formants
        .iter()
        .map(|&(c, bw)| (-0.5 * ((hz - c) / bw).powi(2)).exp())
        .sum::<f64>()
        + 0.02
}

/// Harmonic source with a gliding pitch, syllable-rate envelope and two
/// alternating vowel-like formant sets. Peak-normalized to 0.5.
pub fn speech_like<R: Rng>(rng: &mut R, sample_rate: u32, len: usize) -> Result<Waveform> {
    let sr = sample_rate as f64;
    let f0_start = rng.gen_range(90.0..220.0);
    let f0_end = f0_start * rng.gen_range(0.7..1.4);
    let syllable_hz = rng.gen_range(3.0..6.0);
    let env_phase = rng.gen_range(0.0..2.0 * PI);
    let vowels: Vec<Vec<(f64, f64)>> = (0..2)
        .map(|_| {
            vec![
                (rng.gen_range(300.0..900.0), rng.gen_range(60.0..140.0)),
                (rng.gen_range(900.0..2400.0), rng.gen_range(90.0..200.0)),
                (rng.gen_range(2400.0..3600.0), rng.gen_range(120.0..260.0)),
            ]
        })
        .collect();
    let top_hz = (sr / 2.0 * 0.9).min(5000.0);

    let mut out = vec![0.0; len];
    let mut pitch_phase = 0.0;
    for (i, y) in out.iter_mut().enumerate() {
        let t = i as f64 / sr;
        let frac = i as f64 / len.max(1) as f64;
        let f0 = f0_start + (f0_end - f0_start) * frac;
        pitch_phase += 2.0 * PI * f0 / sr;
        let syl = (2.0 * PI * syllable_hz * t + env_phase).sin();
        let env = syl.max(0.0).powf(0.7) + 0.03;
        let vowel = &vowels[usize::from(syl.cos() > 0.0)];
        let mut acc = 0.0;
        let mut k = 1;
        while k as f64 * f0 < top_hz {
            let hz = k as f64 * f0;
            acc += formant_gain(hz, vowel) / (k as f64).sqrt() * (k as f64 * pitch_phase).sin();
            k += 1;
        }
        *y = env * acc;
    }
    let peak = out.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|x| *x *= 0.5 / peak);
    }
    Waveform::new(out, sample_rate)
}

/// Noise of the given family, normalized to RMS 0.1.
pub fn noise<R: Rng>(rng: &mut R, kind: NoiseKind, sample_rate: u32, len: usize) -> Result<Waveform> {
    let sr = sample_rate as f64;
    let mut white = || rng.gen_range(-1.0..1.0f64);
    let mut out: Vec<f64> = match kind {
        NoiseKind::White => (0..len).map(|_| white()).collect(),
        NoiseKind::Brown => {
            let mut s = 0.0;
            (0..len)
                .map(|_| {
                    s = 0.98 * s + white();
                    s
                })
                .collect()
        }
        NoiseKind::Hum => {
            let base = 50.0 + 10.0 * white().abs();
            (0..len)
                .map(|i| {
                    let t = i as f64 / sr;
                    (1..=6)
                        .map(|k| (2.0 * PI * base * k as f64 * t).sin() / k as f64)
                        .sum::<f64>()
                        + 0.05 * white()
                })
                .collect()
        }
        NoiseKind::Babble => {
            // two-pole resonator driven by white noise, slowly amplitude modulated
            let center = 400.0 + 1200.0 * white().abs();
            let r: f64 = 0.97;
            let theta = 2.0 * PI * center / sr;
            let (a1, a2) = (2.0 * r * theta.cos(), -r * r);
            let mod_hz = 2.0 + 3.0 * white().abs();
            let (mut y1, mut y2) = (0.0, 0.0);
            (0..len)
                .map(|i| {
                    let y = white() + a1 * y1 + a2 * y2;
                    y2 = y1;
                    y1 = y;
                    let t = i as f64 / sr;
                    y * (0.6 + 0.4 * (2.0 * PI * mod_hz * t).sin())
                })
                .collect()
        }
    };
    let rms = (out.iter().map(|x| x * x).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|x| *x *= 0.1 / rms);
    }
    Waveform::new(out, sample_rate)
}

fn prepare(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `count` speech-like files named `<prefix><index>.wav`. Each file
/// depends only on `(seed, file stem)`.
pub fn write_speech_pool(
    dir: impl AsRef<Path>,
    prefix: &str,
    count: usize,
    seconds: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    prepare(dir)?;
    let len = (seconds * sample_rate as f64).round() as usize;
    (0..count)
        .map(|i| {
            let stem = format!("{prefix}{i:04}");
            let mut rng = ChaCha8Rng::seed_from_u64(utterance_seed(seed, &stem));
            let path = dir.join(format!("{stem}.wav"));
            write_wav(&path, &speech_like(&mut rng, sample_rate, len)?)?;
            Ok(path)
        })
        .collect()
}

/// Writes one file per noise family, named after the family.
pub fn write_noise_pool(dir: impl AsRef<Path>, seconds: f64, sample_rate: u32, seed: u64) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    prepare(dir)?;
    let len = (seconds * sample_rate as f64).round() as usize;
    NoiseKind::ALL
        .iter()
        .map(|&kind| {
            let mut rng = ChaCha8Rng::seed_from_u64(utterance_seed(seed, kind.name()));
            let path = dir.join(format!("{}.wav", kind.name()));
            write_wav(&path, &noise(&mut rng, kind, sample_rate, len)?)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let a = speech_like(&mut ChaCha8Rng::seed_from_u64(1), 16000, 8000).unwrap();
        let b = speech_like(&mut ChaCha8Rng::seed_from_u64(1), 16000, 8000).unwrap();
        assert_eq!(a, b);
        assert!((a.peak() - 0.5).abs() < 1e-12);
        for kind in NoiseKind::ALL {
            let n = noise(&mut ChaCha8Rng::seed_from_u64(2), kind, 16000, 4000).unwrap();
            let rms = (n.energy() / n.len() as f64).sqrt();
            assert!((rms - 0.1).abs() < 1e-12, "{kind:?}");
        }
    }

    #[test]
    fn pools_are_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_speech_pool(dir.path().join("a"), "utt", 2, 0.1, 16000, 3).unwrap();
        let b = write_speech_pool(dir.path().join("b"), "utt", 2, 0.1, 16000, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        let n = write_noise_pool(dir.path().join("n"), 0.1, 16000, 3).unwrap();
        assert_eq!(n.len(), 4);
        assert!(n[0].ends_with("white.wav"));
    }
}
