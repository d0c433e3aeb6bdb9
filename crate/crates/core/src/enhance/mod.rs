//! Mask-based enhancement front end.
//!
//! The estimator maps a noisy magnitude `Y` to a mask `M` in (0, 1); the
//! enhanced speech is `M * Y` and the predicted noise is what remains,
//! `Y - M * Y`. Network inputs are log-compressed as `ln(Y + 1e-8)`.

mod lstm;
mod mlp;

use ndarray::{Array2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use lstm::{LstmCache, LstmLayer, LstmParams};
pub use mlp::{Dense, MlpCache, MlpParams};

use crate::error::{Error, Result};
use crate::params::{OwnedBlock, ParamBlock, ParamSet};

pub const INPUT_EPS: f64 = 1e-8;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn check_same(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

/// T x F mask with entries in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Mask(Array2<f64>);

impl Mask {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::InvalidConfig("mask entries must lie in [0, 1]".into()));
        }
        Ok(Self(values))
    }

    pub fn filled(dim: (usize, usize), value: f64) -> Result<Self> {
        Self::new(Array2::from_elem(dim, value))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_values(self) -> Array2<f64> {
        self.0
    }
}

/// Enhanced speech and predicted noise. `s_hat + n_hat == noisy` exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct EnhancedPair {
    pub s_hat: Array2<f64>,
    pub n_hat: Array2<f64>,
}

/// Ideal ratio mask `S / (S + N)`, 0 where both vanish.
pub fn oracle_mask(clean: &Array2<f64>, noise: &Array2<f64>) -> Result<Mask> {
    check_same(clean, noise)?;
    let mut m = Array2::zeros(clean.dim());
    Zip::from(&mut m).and(clean).and(noise).for_each(|m, &s, &n| {
        let d = s + n;
        *m = if d > 0.0 { (s / d).clamp(0.0, 1.0) } else { 0.0 };
    });
    Ok(Mask(m))
}

pub fn apply_mask(mask: &Mask, noisy: &Array2<f64>) -> Result<EnhancedPair> {
    check_same(noisy, &mask.0)?;
    Ok(split_masked(&mask.0, noisy))
}

/// `N_hat = Y - M Y`, then `S_hat = Y - N_hat`. The second subtraction is
/// exact (its operands are within a factor of two), so `S_hat + N_hat`
/// reproduces `Y` bit for bit; a plain `M Y` can be off by one rounding.
pub(crate) fn split_masked(mask: &Array2<f64>, noisy: &Array2<f64>) -> EnhancedPair {
    let mut s_hat = mask * noisy;
    let mut n_hat = Array2::zeros(noisy.dim());
    Zip::from(&mut s_hat).and(&mut n_hat).and(noisy).for_each(|s, n, &y| {
        *n = y - *s;
        *s = y - *n;
    });
    EnhancedPair { s_hat, n_hat }
}

/// Mean squared error over all entries.
pub fn mse(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    check_same(a, b)?;
    let n = a.len().max(1) as f64;
    Ok(Zip::from(a).and(b).fold(0.0, |acc, &x, &y| acc + (x - y) * (x - y)) / n)
}

/// Gradient of `mse(a, b)` with respect to `a`: `2 (a - b) / len`.
pub fn mse_backward(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    check_same(a, b)?;
    let k = 2.0 / a.len().max(1) as f64;
    Ok((a - b) * k)
}

pub fn enh_loss(s_hat: &Array2<f64>, clean: &Array2<f64>) -> Result<f64> {
    mse(s_hat, clean)
}

pub fn enh_loss_backward(s_hat: &Array2<f64>, clean: &Array2<f64>) -> Result<Array2<f64>> {
    mse_backward(s_hat, clean)
}

pub fn compress_input(noisy: &Array2<f64>) -> Array2<f64> {
    noisy.mapv(|y| (y + INPUT_EPS).ln())
}

/// Architecture of a trainable estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum EstimatorSpec {
    Mlp { hidden: Vec<usize> },
    Recurrent { layers: usize, hidden: usize },
}

impl Default for EstimatorSpec {
    /// Two stacked LSTM layers of 1024 units.
    fn default() -> Self {
        EstimatorSpec::Recurrent {
            layers: 2,
            hidden: 1024,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MaskEstimatorParams {
    Mlp(MlpParams),
    Recurrent(LstmParams),
}

#[derive(Clone, Debug)]
pub enum MaskCache {
    Mlp(MlpCache),
    Recurrent(LstmCache),
}

impl MaskEstimatorParams {
    pub fn init<R: Rng>(spec: &EstimatorSpec, bins: usize, rng: &mut R) -> Result<Self> {
        match spec {
            EstimatorSpec::Mlp { hidden } => Ok(Self::Mlp(MlpParams::init(rng, bins, hidden))),
            EstimatorSpec::Recurrent { layers, hidden } => {
                if *layers == 0 || *hidden == 0 {
                    return Err(Error::InvalidConfig("recurrent estimator needs layers, hidden >= 1".into()));
                }
                Ok(Self::Recurrent(LstmParams::init(rng, bins, *layers, *hidden)))
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Self::Mlp(p) => p.input_dim(),
            Self::Recurrent(p) => p.input_dim(),
        }
    }

    /// Zeroes the output projection so the initial mask is 0.5 everywhere.
    pub fn zero_output_layer(&mut self) {
        let out = match self {
            Self::Mlp(p) => p.layers.last_mut().expect("non-empty"),
            Self::Recurrent(p) => &mut p.out,
        };
        out.w.fill(0.0);
        out.b.fill(0.0);
    }
}

impl ParamSet for MaskEstimatorParams {
    fn variant(&self) -> &'static str {
        match self {
            Self::Mlp(_) => "mlp",
            Self::Recurrent(_) => "recurrent",
        }
    }

    fn blocks(&self) -> Vec<ParamBlock<'_>> {
        match self {
            Self::Mlp(p) => p.blocks(),
            Self::Recurrent(p) => p.blocks(),
        }
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Self::Mlp(p) => p.blocks_mut(),
            Self::Recurrent(p) => p.blocks_mut(),
        }
    }

    fn from_blocks(variant: &str, blocks: Vec<OwnedBlock>) -> Result<Self> {
        match variant {
            "mlp" => Ok(Self::Mlp(MlpParams::from_blocks(blocks)?)),
            "recurrent" => Ok(Self::Recurrent(LstmParams::from_blocks(blocks)?)),
            other => Err(Error::Checkpoint(format!("not a mask estimator variant: {other}"))),
        }
    }
}

pub fn estimate_mask(params: &MaskEstimatorParams, noisy: &Array2<f64>) -> Result<(Mask, MaskCache)> {
    if noisy.ncols() != params.input_dim() {
        return Err(Error::ShapeMismatch {
            expected: (noisy.nrows(), params.input_dim()),
            got: noisy.dim(),
        });
    }
    let x = compress_input(noisy);
    match params {
        MaskEstimatorParams::Mlp(p) => {
            let (m, c) = p.forward(x)?;
            Ok((Mask(m), MaskCache::Mlp(c)))
        }
        MaskEstimatorParams::Recurrent(p) => {
            let (m, c) = p.forward(x)?;
            Ok((Mask(m), MaskCache::Recurrent(c)))
        }
    }
}

pub fn mask_estimator_backward(
    params: &MaskEstimatorParams,
    cache: &MaskCache,
    d_mask: &Array2<f64>,
) -> Result<MaskEstimatorParams> {
    match (params, cache) {
        (MaskEstimatorParams::Mlp(p), MaskCache::Mlp(c)) => Ok(MaskEstimatorParams::Mlp(p.backward(c, d_mask)?)),
        (MaskEstimatorParams::Recurrent(p), MaskCache::Recurrent(c)) => {
            Ok(MaskEstimatorParams::Recurrent(p.backward(c, d_mask)?))
        }
        _ => Err(Error::CacheMismatch("estimator variant differs from cache".into())),
    }
}
