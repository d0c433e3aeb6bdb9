//! Triangular HTK-scale mel filterbank and log-mel features.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::MagnitudeSpectrogram;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub n_mels: usize,
    pub fmin_hz: f64,
    /// `None` means Nyquist.
    pub fmax_hz: Option<f64>,
    /// Floor applied to filterbank power before the log.
    pub floor_value: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            fmin_hz: 0.0,
            fmax_hz: None,
            floor_value: 1e-10,
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Clone, Debug)]
pub struct MelFilterbank {
    /// n_mels x F, nonnegative.
    weights: Array2<f64>,
    center_hz: Vec<f64>,
    floor_value: f64,
}

impl MelFilterbank {
    pub fn new(cfg: &MelConfig, sample_rate: u32, window_len: usize) -> Result<Self> {
        let nyquist = sample_rate as f64 / 2.0;
        let fmax = cfg.fmax_hz.unwrap_or(nyquist);
        if cfg.n_mels == 0 {
            return Err(Error::InvalidMelConfig("n_mels must be >= 1".into()));
        }
        if !(cfg.fmin_hz >= 0.0 && cfg.fmin_hz < fmax && fmax <= nyquist) {
            return Err(Error::InvalidMelConfig(format!(
                "need 0 <= fmin < fmax <= {nyquist}, got {}..{fmax}",
                cfg.fmin_hz
            )));
        }
        if !(cfg.floor_value > 0.0 && cfg.floor_value.is_finite()) {
            return Err(Error::InvalidMelConfig("floor_value must be positive".into()));
        }
        let bins = window_len / 2 + 1;
        let (mlo, mhi) = (hz_to_mel(cfg.fmin_hz), hz_to_mel(fmax));
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz: Vec<f64> = (0..bins)
            .map(|k| k as f64 * sample_rate as f64 / window_len as f64)
            .collect();

        let mut weights = Array2::zeros((cfg.n_mels, bins));
        for m in 0..cfg.n_mels {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for (k, &f) in bin_hz.iter().enumerate() {
                let up = (f - lo) / (c - lo);
                let down = (hi - f) / (hi - c);
                weights[[m, k]] = up.min(down).max(0.0);
            }
            if weights.row(m).sum() <= 0.0 {
                return Err(Error::InvalidMelConfig(format!(
                    "mel filter {m} covers no FFT bin; reduce n_mels or raise window_len"
                )));
            }
        }
        Ok(Self {
            weights,
            center_hz: edges[1..=cfg.n_mels].to_vec(),
            floor_value: cfg.floor_value,
        })
    }

    pub fn for_spectrogram(cfg: &MelConfig, mag: &MagnitudeSpectrogram) -> Result<Self> {
        Self::new(cfg, mag.meta().sample_rate, mag.meta().window_len)
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn center_hz(&self) -> &[f64] {
        &self.center_hz
    }

    pub fn n_mels(&self) -> usize {
        self.weights.nrows()
    }

    fn filtered_power(&self, mag: &Array2<f64>) -> Result<Array2<f64>> {
        if mag.ncols() != self.weights.ncols() {
            return Err(Error::ShapeMismatch {
                expected: (mag.nrows(), self.weights.ncols()),
                got: mag.dim(),
            });
        }
        let power = mag.mapv(|x| x * x);
        Ok(power.dot(&self.weights.t()))
    }

    /// `log(max(W * |X|^2, floor))` per frame. Accepts any real matrix so it
    /// can be applied to (clamped) refined spectrograms during training.
    pub fn log_mel(&self, mag: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self
            .filtered_power(mag)?
            .mapv(|p| p.max(self.floor_value).ln()))
    }

    /// Gradient of `sum(upstream * log_mel(mag))` with respect to `mag`.
    pub fn log_mel_backward(&self, mag: &Array2<f64>, upstream: &Array2<f64>) -> Result<Array2<f64>> {
        let fp = self.filtered_power(mag)?;
        let mut d_fp = upstream.clone();
        Zip::from(&mut d_fp).and(&fp).for_each(|g, &p| {
            *g = if p > self.floor_value { *g / p } else { 0.0 };
        });
        let d_power = d_fp.dot(&self.weights);
        Ok(d_power * mag * 2.0)
    }
}

pub fn log_mel(mag: &MagnitudeSpectrogram, cfg: &MelConfig) -> Result<Array2<f64>> {
    MelFilterbank::for_spectrogram(cfg, mag)?.log_mel(mag.frames())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::SpecMeta;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn meta(frames: usize) -> SpecMeta {
        SpecMeta {
            window_len: 512,
            hop_len: 128,
            sample_rate: 16000,
            signal_len: (frames - 1) * 128,
        }
    }

    #[test]
    fn eighty_dim_features() {
        let mag = MagnitudeSpectrogram::new(Array2::from_elem((5, 257), 0.3), meta(5)).unwrap();
        let f = log_mel(&mag, &MelConfig::default()).unwrap();
        assert_eq!(f.dim(), (5, 80));
        assert!(f.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn zero_input_hits_floor() {
        let mag = MagnitudeSpectrogram::new(Array2::zeros((3, 257)), meta(3)).unwrap();
        let f = log_mel(&mag, &MelConfig::default()).unwrap();
        assert!(f.iter().all(|&x| x == 1e-10f64.ln()));
    }

    #[test]
    fn filters_nonempty_and_ordered() {
        let fb = MelFilterbank::new(&MelConfig::default(), 16000, 512).unwrap();
        let bin_hz = |k: usize| k as f64 * 16000.0 / 512.0;
        let mut prev_centroid = -1.0;
        for (m, row) in fb.weights().rows().into_iter().enumerate() {
            let sum = row.sum();
            assert!(sum > 0.0, "filter {m} is empty");
            assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
            // inspect the constructed filter directly: its weighted centroid
            let centroid: f64 = row.iter().enumerate().map(|(k, w)| w * bin_hz(k)).sum::<f64>() / sum;
            assert!(centroid > prev_centroid, "filter {m} centroid {centroid} <= {prev_centroid}");
            prev_centroid = centroid;
        }
        assert!(fb.center_hz().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn htk_scale_round_trip() {
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
        for hz in [0.0, 100.0, 1000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = MelConfig::default();
        cfg.n_mels = 0;
        assert!(MelFilterbank::new(&cfg, 16000, 512).is_err());
        let cfg = MelConfig {
            fmax_hz: Some(9000.0),
            ..MelConfig::default()
        };
        assert!(MelFilterbank::new(&cfg, 16000, 512).is_err());
        let cfg = MelConfig {
            fmin_hz: 4000.0,
            fmax_hz: Some(4000.0),
            ..MelConfig::default()
        };
        assert!(matches!(
            MelFilterbank::new(&cfg, 16000, 512),
            Err(Error::InvalidMelConfig(_))
        ));
    }

    #[test]
    fn monotone_in_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fb = MelFilterbank::new(&MelConfig::default(), 16000, 512).unwrap();
        let base = Array2::from_shape_fn((2, 257), |_| rng.gen_range(0.0..2.0));
        let f0 = fb.log_mel(&base).unwrap();
        for k in [0, 7, 100, 256] {
            let mut bumped = base.clone();
            bumped[[1, k]] += 0.5;
            let f1 = fb.log_mel(&bumped).unwrap();
            assert!(f1.iter().zip(f0.iter()).all(|(a, b)| a >= b));
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = MelConfig {
            n_mels: 6,
            ..MelConfig::default()
        };
        let fb = MelFilterbank::new(&cfg, 16000, 32).unwrap();
        let x = Array2::from_shape_fn((3, 17), |_| rng.gen_range(0.2..1.5));
        let up = Array2::from_shape_fn((3, 6), |_| rng.gen_range(-1.0..1.0));
        let g = fb.log_mel_backward(&x, &up).unwrap();
        let h = 1e-5;
        for idx in [(0, 0), (1, 5), (2, 16), (0, 9)] {
            let mut p = x.clone();
            p[idx] += h;
            let mut m = x.clone();
            m[idx] -= h;
            let fp = (fb.log_mel(&p).unwrap() * &up).sum();
            let fm = (fb.log_mel(&m).unwrap() * &up).sum();
            let num = (fp - fm) / (2.0 * h);
            assert!((num - g[idx]).abs() <= 1e-6 * num.abs().max(1e-3), "{idx:?}: {num} vs {}", g[idx]);
        }
    }
}
