//! SNR-controlled mixing and reproducible corpus simulation.
//!
//! SNR is defined on full-utterance sample energy. Noise shorter than the
//! clean utterance is tiled starting from a per-utterance random offset.
//! Mixtures are kept unnormalized in memory; when exported to PCM16 they are
//! peak-normalized only if they would clip, and the applied gain is recorded
//! in the manifest as `export_gain`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_ordered, Execution};
use crate::signal::{magnitude, stft, MagnitudeSpectrogram, StftConfig, Waveform};
use crate::wav::{read_wav, write_wav};

/// SNR grid used for the training, development and per-condition test sets.
pub const STANDARD_SNRS_DB: [f64; 4] = [-10.0, -5.0, 0.0, 5.0];

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Debug, PartialEq)]
pub enum SnrMode {
    Fixed(f64),
    /// Uniform draw from the given set per utterance.
    Randomized(Vec<f64>),
}

impl SnrMode {
    pub fn standard_random() -> Self {
        SnrMode::Randomized(STANDARD_SNRS_DB.to_vec())
    }

    fn validate(&self) -> Result<()> {
        match self {
            SnrMode::Fixed(x) if !x.is_finite() => {
                Err(Error::InvalidConfig(format!("non-finite SNR {x}")))
            }
            SnrMode::Randomized(set) if set.is_empty() || set.iter().any(|x| !x.is_finite()) => {
                Err(Error::InvalidConfig("SNR set must be non-empty and finite".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseSelection {
    Index(usize),
    Randomized,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixSpec {
    pub snr_mode: SnrMode,
    pub seed: u64,
    pub noise_selection: NoiseSelection,
}

/// One row of `manifest.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub utt_id: String,
    pub clean_path: String,
    pub noise_path: String,
    pub mixed_path: String,
    pub snr_db: f64,
    /// Per-utterance seed derived from the corpus seed and `utt_id`.
    pub seed: u64,
    pub noise_offset: usize,
    pub export_gain: f64,
}

/// Tiles `noise` from `offset` to `len` samples.
pub fn noise_segment(noise: &[f64], offset: usize, len: usize) -> Vec<f64> {
    let n = noise.len();
    (0..len).map(|i| noise[(offset + i) % n]).collect()
}

pub fn snr_db(clean: &Waveform, noise: &Waveform) -> f64 {
    10.0 * (clean.energy() / noise.energy()).log10()
}

/// Gain applied to a noise segment of energy `noise_energy` to reach
/// `snr_db` against a clean signal of energy `clean_energy`.
pub fn snr_gain(clean_energy: f64, noise_energy: f64, snr_db: f64) -> f64 {
    (clean_energy / (noise_energy * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// Returns `(clean + g * segment, g * segment)`.
pub fn mix_at_snr(
    clean: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    noise_offset: usize,
) -> Result<(Waveform, Waveform)> {
    if clean.sample_rate() != noise.sample_rate() {
        return Err(Error::SampleRateMismatch(clean.sample_rate(), noise.sample_rate()));
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidConfig(format!("non-finite SNR {snr_db}")));
    }
    let clean_energy = clean.energy();
    if clean_energy <= 0.0 {
        return Err(Error::ZeroEnergy("clean"));
    }
    let segment = noise_segment(noise.samples(), noise_offset, clean.len());
    let noise_energy: f64 = segment.iter().map(|x| x * x).sum();
    if noise_energy <= 0.0 {
        return Err(Error::ZeroEnergy("noise"));
    }
    let g = snr_gain(clean_energy, noise_energy, snr_db);
    let scaled: Vec<f64> = segment.iter().map(|x| g * x).collect();
    let mixed: Vec<f64> = clean.samples().iter().zip(&scaled).map(|(s, n)| s + n).collect();
    Ok((
        Waveform::new(mixed, clean.sample_rate())?,
        Waveform::new(scaled, clean.sample_rate())?,
    ))
}

/// Stable 64-bit hash of `(seed, utt_id)`: FNV-1a followed by a splitmix64
/// finalizer. Independent of the std hasher so manifests stay reproducible
/// across toolchains.
pub fn utterance_seed(seed: u64, utt_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(utt_id.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

pub(crate) fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .map(|x| x.eq_ignore_ascii_case("wav"))
                    .unwrap_or(false)
        })
        .collect();
    out.sort();
    Ok(out)
}

fn load_pool(dir: &Path) -> Vec<(PathBuf, Waveform)> {
    let mut pool = Vec::new();
    for path in list_wavs(dir).unwrap_or_default() {
        match read_wav(&path) {
            Ok(w) => pool.push((path, w)),
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    pool
}

pub fn simulate_corpus(
    clean_dir: impl AsRef<Path>,
    noise_dir: impl AsRef<Path>,
    spec: &MixSpec,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<Manifest>> {
    simulate_corpus_with(clean_dir, noise_dir, spec, out_dir, Execution::default())
}

/// Mixes every clean utterance with one noise file, writes `<utt_id>.wav`
/// and `manifest.jsonl` into `out_dir`, and returns the manifest rows in
/// clean-file order.
pub fn simulate_corpus_with(
    clean_dir: impl AsRef<Path>,
    noise_dir: impl AsRef<Path>,
    spec: &MixSpec,
    out_dir: impl AsRef<Path>,
    exec: Execution,
) -> Result<Vec<Manifest>> {
    let (clean_dir, noise_dir, out_dir) = (clean_dir.as_ref(), noise_dir.as_ref(), out_dir.as_ref());
    spec.snr_mode.validate()?;
    list_wavs(clean_dir)?;
    list_wavs(noise_dir)?;
    let noises = load_pool(noise_dir);
    if noises.is_empty() {
        return Err(Error::NoInputs(noise_dir.to_path_buf()));
    }
    if let NoiseSelection::Index(i) = spec.noise_selection {
        if i >= noises.len() {
            return Err(Error::InvalidConfig(format!(
                "noise index {i} out of range ({} noise files)",
                noises.len()
            )));
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let cleans = list_wavs(clean_dir)?;
    let rows = map_ordered(exec, &cleans, |path| {
        let row = simulate_one(path, &noises, spec, out_dir);
        if let Err(e) = &row {
            log::warn!("skipping {}: {e}", path.display());
        }
        row.ok()
    });
    let rows: Vec<Manifest> = rows.into_iter().flatten().collect();
    if rows.is_empty() {
        return Err(Error::NoInputs(clean_dir.to_path_buf()));
    }
    write_manifest(out_dir.join(MANIFEST_FILE), &rows)?;
    Ok(rows)
}

fn simulate_one(
    clean_path: &Path,
    noises: &[(PathBuf, Waveform)],
    spec: &MixSpec,
    out_dir: &Path,
) -> Result<Manifest> {
    let clean = read_wav(clean_path)?;
    let utt_id = clean_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let seed = utterance_seed(spec.seed, &utt_id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let snr_db = match &spec.snr_mode {
        SnrMode::Fixed(x) => *x,
        SnrMode::Randomized(set) => *set.choose(&mut rng).expect("validated non-empty"),
    };
    let noise_idx = match spec.noise_selection {
        NoiseSelection::Index(i) => i,
        NoiseSelection::Randomized => rng.gen_range(0..noises.len()),
    };
    let (noise_path, noise) = &noises[noise_idx];
    let noise_offset = rng.gen_range(0..noise.len());

    let (mixed, _) = mix_at_snr(&clean, noise, snr_db, noise_offset)?;
    let peak = mixed.peak();
    let export_gain = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    let mixed_path = out_dir.join(format!("{utt_id}.wav"));
    write_wav(&mixed_path, &mixed.scaled(export_gain))?;

    Ok(Manifest {
        utt_id,
        clean_path: clean_path.to_string_lossy().into_owned(),
        noise_path: noise_path.to_string_lossy().into_owned(),
        mixed_path: mixed_path.to_string_lossy().into_owned(),
        snr_db,
        seed,
        noise_offset,
        export_gain,
    })
}

pub fn write_manifest(path: impl AsRef<Path>, rows: &[Manifest]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, row)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<Manifest>> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Manifest = serde_json::from_str(&line)?;
        if row.clean_path.is_empty() || row.noise_path.is_empty() || row.mixed_path.is_empty() {
            return Err(Error::InvalidConfig(format!("manifest row {} has an empty path", row.utt_id)));
        }
        if !row.snr_db.is_finite() {
            return Err(Error::InvalidConfig(format!("manifest row {} has non-finite SNR", row.utt_id)));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// How the noisy magnitude is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MagnitudeMode {
    /// `Y = |STFT(s + n)|`; additivity with `S + N` is only approximate.
    #[default]
    Waveform,
    /// `Y := S + N` built in the magnitude domain, so additivity is exact.
    Synthetic,
}

#[derive(Clone, Debug)]
pub struct Triplet {
    pub noisy: MagnitudeSpectrogram,
    pub clean: MagnitudeSpectrogram,
    pub noise: MagnitudeSpectrogram,
}

impl Triplet {
    /// `||Y - (S + N)|| / ||Y||`.
    pub fn additivity_error(&self) -> f64 {
        let diff = self.noisy.frames() - &(self.clean.frames() + self.noise.frames());
        let num = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
        let den = self.noisy.frames().iter().map(|x| x * x).sum::<f64>().sqrt();
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }
}

/// Clean and scaled-noise waveforms for a manifest row. The scaled noise is
/// regenerated from the noise file so `mixture = clean + noise` holds exactly
/// in floating point, free of the PCM16 export quantization.
pub fn row_waveforms(row: &Manifest) -> Result<(Waveform, Waveform)> {
    let clean = read_wav(&row.clean_path)?;
    let noise = read_wav(&row.noise_path)?;
    if clean.sample_rate() != noise.sample_rate() {
        return Err(Error::SampleRateMismatch(clean.sample_rate(), noise.sample_rate()));
    }
    let segment = noise_segment(noise.samples(), row.noise_offset, clean.len());
    let energy: f64 = segment.iter().map(|x| x * x).sum();
    let scaled = if energy > 0.0 {
        let g = snr_gain(clean.energy(), energy, row.snr_db);
        segment.iter().map(|x| g * x).collect()
    } else {
        vec![0.0; clean.len()]
    };
    let sr = clean.sample_rate();
    Ok((clean, Waveform::new(scaled, sr)?))
}

pub fn triplet_from_waveforms(
    clean: &Waveform,
    noise: &Waveform,
    cfg: StftConfig,
    mode: MagnitudeMode,
) -> Result<Triplet> {
    let s = magnitude(&stft(clean, cfg)?);
    let n = magnitude(&stft(noise, cfg)?);
    let y = match mode {
        MagnitudeMode::Synthetic => {
            let sum: Array2<f64> = s.frames() + n.frames();
            MagnitudeSpectrogram::new(sum, *s.meta())?
        }
        MagnitudeMode::Waveform => {
            let mixed: Vec<f64> = clean.samples().iter().zip(noise.samples()).map(|(a, b)| a + b).collect();
            magnitude(&stft(&Waveform::new(mixed, clean.sample_rate())?, cfg)?)
        }
    };
    Ok(Triplet {
        noisy: y,
        clean: s,
        noise: n,
    })
}

pub fn magnitude_triplet(row: &Manifest, cfg: StftConfig, mode: MagnitudeMode) -> Result<Triplet> {
    let (clean, noise) = row_waveforms(row)?;
    triplet_from_waveforms(&clean, &noise, cfg, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_wave(seed: u64, n: usize, amp: f64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..n).map(|_| amp * rng.gen_range(-1.0..1.0)).collect(), 16000).unwrap()
    }

    #[test]
    fn hits_target_snr() {
        let clean = random_wave(1, 8000, 0.3);
        let noise = random_wave(2, 3000, 0.5);
        for target in [-10.0, -5.0, 0.0, 5.0, 12.5] {
            let (mixed, scaled) = mix_at_snr(&clean, &noise, target, 1234).unwrap();
            assert!((snr_db(&clean, &scaled) - target).abs() < 0.01);
            for ((m, c), n) in mixed.samples().iter().zip(clean.samples()).zip(scaled.samples()) {
                assert_eq!(*m, c + n);
            }
        }
    }

    #[test]
    fn equal_signals_at_zero_db() {
        let clean = random_wave(3, 1000, 0.2);
        let (mixed, scaled) = mix_at_snr(&clean, &clean, 0.0, 0).unwrap();
        for ((m, c), n) in mixed.samples().iter().zip(clean.samples()).zip(scaled.samples()) {
            assert!((n - c).abs() < 1e-15);
            assert!((m - 2.0 * c).abs() < 1e-15);
        }
    }

    #[test]
    fn gain_matches_rms_ratio() {
        let n = 4000;
        let clean = Waveform::new((0..n).map(|i| if i % 2 == 0 { 0.1 } else { -0.1 }).collect(), 16000).unwrap();
        let noise = Waveform::new(vec![0.2; n], 16000).unwrap();
        let (_, scaled) = mix_at_snr(&clean, &noise, 10.0, 0).unwrap();
        // brute-force: energies are n*0.01 and n*0.04
        let expected = (0.1 / 0.2) * 10f64.powf(-10.0 / 20.0);
        let g = scaled.samples()[0] / 0.2;
        assert!((g - expected).abs() < 1e-12, "{g} vs {expected}");
    }

    #[test]
    fn mixing_errors() {
        let clean = random_wave(1, 100, 0.3);
        let silent = Waveform::new(vec![0.0; 100], 16000).unwrap();
        assert!(matches!(mix_at_snr(&silent, &clean, 0.0, 0), Err(Error::ZeroEnergy("clean"))));
        assert!(matches!(mix_at_snr(&clean, &silent, 0.0, 0), Err(Error::ZeroEnergy("noise"))));
        let other_rate = Waveform::new(vec![0.1; 100], 8000).unwrap();
        assert!(matches!(
            mix_at_snr(&clean, &other_rate, 0.0, 0),
            Err(Error::SampleRateMismatch(16000, 8000))
        ));
    }

    #[test]
    fn tiling_wraps_from_offset() {
        assert_eq!(noise_segment(&[1.0, 2.0, 3.0], 2, 5), vec![3.0, 1.0, 2.0, 3.0, 1.0]);
    }

    #[test]
    fn utterance_seed_is_stable() {
        assert_eq!(utterance_seed(7, "a"), utterance_seed(7, "a"));
        assert_ne!(utterance_seed(7, "a"), utterance_seed(7, "b"));
        assert_ne!(utterance_seed(7, "a"), utterance_seed(8, "a"));
    }

    #[test]
    fn synthetic_mode_is_exactly_additive() {
        let clean = random_wave(5, 4000, 0.3);
        let noise = random_wave(6, 4000, 0.1);
        let t = triplet_from_waveforms(&clean, &noise, StftConfig::default(), MagnitudeMode::Synthetic).unwrap();
        let sum = t.clean.frames() + t.noise.frames();
        assert!(t.noisy.frames().iter().zip(sum.iter()).all(|(a, b)| a == b));
        assert_eq!(t.additivity_error(), 0.0);
        let w = triplet_from_waveforms(&clean, &noise, StftConfig::default(), MagnitudeMode::Waveform).unwrap();
        let e = w.additivity_error();
        assert!(e > 0.0 && e < 1.0, "diagnostic {e}");
    }
}
