//! Waveforms, STFT/iSTFT and magnitude/phase handling.
//!
//! Frames are centered: the signal is reflect-padded by `window_len / 2` on
//! both ends before framing, and a periodic Hann window is applied. With a
//! 75% overlap the window satisfies the constant-overlap-add condition, so
//! `istft(stft(x))` reproduces `x` up to rounding.

use std::f64::consts::PI;

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono audio with samples nominally in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyWaveform);
        }
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteSample(i));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sum of squared samples.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|x| x * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop_len: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_len: 512,
            hop_len: 128,
        }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    fn validate(&self) -> Result<()> {
        if self.hop_len == 0 || self.hop_len > self.window_len {
            return Err(Error::InvalidStft(format!(
                "need window_len >= hop_len >= 1, got {}/{}",
                self.window_len, self.hop_len
            )));
        }
        if self.window_len < 2 || self.window_len % 2 != 0 {
            return Err(Error::InvalidStft(format!(
                "window_len must be even and >= 2, got {}",
                self.window_len
            )));
        }
        Ok(())
    }
}

/// Shape metadata shared by complex and magnitude spectrograms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpecMeta {
    pub window_len: usize,
    pub hop_len: usize,
    pub sample_rate: u32,
    /// Length of the unpadded waveform the frames were computed from.
    pub signal_len: usize,
}

impl SpecMeta {
    pub fn stft_config(&self) -> StftConfig {
        StftConfig {
            window_len: self.window_len,
            hop_len: self.hop_len,
        }
    }

    pub fn bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn padded_len(&self) -> usize {
        self.signal_len + self.window_len
    }

    pub fn frames(&self) -> usize {
        (self.padded_len() - self.window_len) / self.hop_len + 1
    }

    fn check_shape(&self, shape: (usize, usize)) -> Result<()> {
        self.stft_config().validate()?;
        let expected = (self.frames(), self.bins());
        if shape != expected {
            return Err(Error::ShapeMismatch {
                expected,
                got: shape,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    frames: Array2<Complex64>,
    meta: SpecMeta,
}

impl ComplexSpectrogram {
    pub fn from_frames(frames: Array2<Complex64>, meta: SpecMeta) -> Result<Self> {
        meta.check_shape(frames.dim())?;
        if frames.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidStft("non-finite spectrogram entry".into()));
        }
        Ok(Self { frames, meta })
    }

    pub fn frames(&self) -> &Array2<Complex64> {
        &self.frames
    }

    pub fn meta(&self) -> &SpecMeta {
        &self.meta
    }
}

/// T x F matrix of nonnegative magnitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct MagnitudeSpectrogram {
    frames: Array2<f64>,
    meta: SpecMeta,
}

impl MagnitudeSpectrogram {
    pub fn new(frames: Array2<f64>, meta: SpecMeta) -> Result<Self> {
        meta.check_shape(frames.dim())?;
        if frames.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidConfig(
                "magnitude entries must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { frames, meta })
    }

    /// Clamps negative entries to zero; used when exporting refined spectrograms.
    pub fn from_clamped(frames: &Array2<f64>, meta: SpecMeta) -> Result<Self> {
        Self::new(frames.mapv(|x| x.max(0.0)), meta)
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn into_frames(self) -> Array2<f64> {
        self.frames
    }

    pub fn meta(&self) -> &SpecMeta {
        &self.meta
    }

    pub fn dim(&self) -> (usize, usize) {
        self.frames.dim()
    }

    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.frames.ncols()
    }
}

pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((0..pad).map(|i| x[pad - i]));
    out.extend_from_slice(x);
    out.extend((0..pad).map(|j| x[n - 2 - j]));
    out
}

pub fn stft(w: &Waveform, cfg: StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    let pad = cfg.window_len / 2;
    if w.len() <= pad {
        return Err(Error::TooShort {
            len: w.len(),
            window_len: cfg.window_len,
        });
    }
    let meta = SpecMeta {
        window_len: cfg.window_len,
        hop_len: cfg.hop_len,
        sample_rate: w.sample_rate(),
        signal_len: w.len(),
    };
    let padded = reflect_pad(w.samples(), pad);
    let window = hann_periodic(cfg.window_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.window_len);
    let n_frames = meta.frames();
    let bins = cfg.bins();

    let mut frames = Array2::<Complex64>::zeros((n_frames, bins));
    let mut buf = vec![Complex64::default(); cfg.window_len];
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    for (t, mut row) in frames.rows_mut().into_iter().enumerate() {
        let start = t * cfg.hop_len;
        for (b, (&x, &win)) in buf
            .iter_mut()
            .zip(padded[start..start + cfg.window_len].iter().zip(&window))
        {
            *b = Complex64::new(x * win, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (dst, src) in row.iter_mut().zip(&buf[..bins]) {
            *dst = *src;
        }
    }
    Ok(ComplexSpectrogram { frames, meta })
}

/// Overlap-add synthesis with window-square normalization, trimmed back to
/// the original (unpadded) signal length.
pub fn istft(c: &ComplexSpectrogram) -> Result<Waveform> {
    let meta = c.meta;
    let n = meta.window_len;
    let bins = meta.bins();
    let pad = n / 2;
    let window = hann_periodic(n);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let covered = (c.frames.nrows() - 1) * meta.hop_len + n;

    let mut acc = vec![0.0; covered];
    let mut norm = vec![0.0; covered];
    let mut buf = vec![Complex64::default(); n];
    let mut scratch = vec![Complex64::default(); ifft.get_inplace_scratch_len()];
    for (t, row) in c.frames.rows().into_iter().enumerate() {
        for k in 0..bins {
            buf[k] = row[k];
        }
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        for k in 1..n / 2 {
            buf[n - k] = row[k].conj();
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let start = t * meta.hop_len;
        for i in 0..n {
            acc[start + i] += buf[i].re / n as f64 * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }

    let mut out = Vec::with_capacity(meta.signal_len);
    for i in pad..pad + meta.signal_len {
        let d = norm.get(i).copied().unwrap_or(0.0);
        if d <= f64::EPSILON {
            return Err(Error::ZeroNormalization(i - pad));
        }
        out.push(acc[i] / d);
    }
    Waveform::new(out, meta.sample_rate)
}

pub fn magnitude(c: &ComplexSpectrogram) -> MagnitudeSpectrogram {
    MagnitudeSpectrogram {
        frames: c.frames.mapv(|z| z.norm()),
        meta: c.meta,
    }
}

/// Entrywise argument; exact zeros map to phase 0.
pub fn phase(c: &ComplexSpectrogram) -> Array2<f64> {
    c.frames
        .mapv(|z| if z.re == 0.0 && z.im == 0.0 { 0.0 } else { z.arg() })
}

pub fn reconstruct(mag: &MagnitudeSpectrogram, phase: &Array2<f64>) -> Result<ComplexSpectrogram> {
    if mag.dim() != phase.dim() {
        return Err(Error::ShapeMismatch {
            expected: mag.dim(),
            got: phase.dim(),
        });
    }
    let mut frames = Array2::<Complex64>::zeros(mag.dim());
    Zip::from(&mut frames)
        .and(&mag.frames)
        .and(phase)
        .for_each(|z, &m, &p| *z = Complex64::from_polar(m, p));
    Ok(ComplexSpectrogram {
        frames,
        meta: mag.meta,
    })
}

/// Resynthesizes a waveform from a magnitude estimate and a borrowed phase.
pub fn synthesize(mag: &MagnitudeSpectrogram, phase: &Array2<f64>) -> Result<Waveform> {
    istft(&reconstruct(mag, phase)?)
}
