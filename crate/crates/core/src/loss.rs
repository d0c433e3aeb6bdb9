//! Weighted speech-distortion loss, joint loss composition and error
//! diagnostics.
//!
//! The refine loss weighs the speech and noise MSE terms by
//! `lambda = E_s / (E_s + E_n)`, where `E_s = sum |S - S_tilde|` and
//! `E_n = sum |N - N_tilde|` are L1 error sums over the batch. By default
//! `lambda` is a per-batch constant for differentiation purposes.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::enhance::{check_same, mse, mse_backward, EnhancedPair};
use crate::error::{Error, Result};
use crate::mel::{MelConfig, MelFilterbank};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineErrors {
    pub e_s_tilde: f64,
    pub e_n_tilde: f64,
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// Recomputed from the batch's L1 errors. With `differentiate`, gradients
    /// also flow through the ratio; otherwise it is treated as a constant.
    Dynamic { differentiate: bool },
    Fixed(f64),
}

impl Default for LambdaMode {
    fn default() -> Self {
        LambdaMode::Dynamic { differentiate: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownstreamMode {
    None,
    /// Log-mel MSE between the (clamped) refined speech and the clean speech.
    #[default]
    FeatureProxy,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointLossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_mode: LambdaMode,
    pub downstream: DownstreamMode,
}

impl Default for JointLossConfig {
    fn default() -> Self {
        Self {
            alpha: 300.0,
            beta: 100.0,
            lambda_mode: LambdaMode::default(),
            downstream: DownstreamMode::default(),
        }
    }
}

impl JointLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite() && self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig("alpha and beta must be finite and >= 0".into()));
        }
        if let LambdaMode::Fixed(v) = self.lambda_mode {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("fixed lambda {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// `a / (a + b)`, or 0.5 when both are zero.
pub fn lambda_from_errors(e_s: f64, e_n: f64) -> f64 {
    let d = e_s + e_n;
    if d > 0.0 {
        e_s / d
    } else {
        0.5
    }
}

fn l1_distance(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, &x, &y| acc + (x - y).abs())
}

pub fn refine_errors(
    s_tilde: &Array2<f64>,
    n_tilde: &Array2<f64>,
    clean: &Array2<f64>,
    noise: &Array2<f64>,
) -> Result<RefineErrors> {
    check_same(clean, s_tilde)?;
    check_same(noise, n_tilde)?;
    let e_s_tilde = l1_distance(clean, s_tilde);
    let e_n_tilde = l1_distance(noise, n_tilde);
    Ok(RefineErrors {
        e_s_tilde,
        e_n_tilde,
        lambda: lambda_from_errors(e_s_tilde, e_n_tilde),
    })
}

#[derive(Clone, Debug)]
pub struct RefineLoss {
    pub loss: f64,
    pub mse_speech: f64,
    pub mse_noise: f64,
    pub errors: RefineErrors,
    /// The weight actually used (fixed value or the batch ratio).
    pub lambda: f64,
    pub d_s_tilde: Array2<f64>,
    pub d_n_tilde: Array2<f64>,
}

pub fn refine_loss(
    s_tilde: &Array2<f64>,
    n_tilde: &Array2<f64>,
    clean: &Array2<f64>,
    noise: &Array2<f64>,
    cfg: &JointLossConfig,
) -> Result<RefineLoss> {
    let errors = refine_errors(s_tilde, n_tilde, clean, noise)?;
    let lambda = match cfg.lambda_mode {
        LambdaMode::Fixed(v) => v,
        LambdaMode::Dynamic { .. } => errors.lambda,
    };
    let mse_speech = mse(s_tilde, clean)?;
    let mse_noise = mse(n_tilde, noise)?;
    let loss = lambda * mse_speech + (1.0 - lambda) * mse_noise;
    let mut d_s_tilde = mse_backward(s_tilde, clean)? * lambda;
    let mut d_n_tilde = mse_backward(n_tilde, noise)? * (1.0 - lambda);

    let total = errors.e_s_tilde + errors.e_n_tilde;
    if matches!(cfg.lambda_mode, LambdaMode::Dynamic { differentiate: true }) && total > 0.0 {
        let spread = mse_speech - mse_noise;
        let dl_da = spread * errors.e_n_tilde / (total * total);
        let dl_db = -spread * errors.e_s_tilde / (total * total);
        Zip::from(&mut d_s_tilde).and(s_tilde).and(clean).for_each(|g, &st, &s| {
            *g += dl_da * (st - s).signum() * f64::from(st != s);
        });
        Zip::from(&mut d_n_tilde).and(n_tilde).and(noise).for_each(|g, &nt, &n| {
            *g += dl_db * (nt - n).signum() * f64::from(nt != n);
        });
    }
    Ok(RefineLoss {
        loss,
        mse_speech,
        mse_noise,
        errors,
        lambda,
        d_s_tilde,
        d_n_tilde,
    })
}

/// `l_downstream + alpha * l_enh + beta * l_refine`.
pub fn joint_loss(l_downstream: f64, l_enh: f64, l_refine: f64, cfg: &JointLossConfig) -> Result<f64> {
    for (name, v) in [("downstream", l_downstream), ("enh", l_enh), ("refine", l_refine)] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::NonFiniteLoss(format!("{name} = {v}")));
        }
    }
    let l_downstream = match cfg.downstream {
        DownstreamMode::None => 0.0,
        DownstreamMode::FeatureProxy => l_downstream,
    };
    Ok(l_downstream + cfg.alpha * l_enh + cfg.beta * l_refine)
}

/// Stand-in for a recognizer loss: log-mel MSE against clean speech.
#[derive(Clone, Debug)]
pub struct FeatureProxy {
    fb: MelFilterbank,
}

impl FeatureProxy {
    pub fn new(cfg: &MelConfig, sample_rate: u32, window_len: usize) -> Result<Self> {
        Ok(Self {
            fb: MelFilterbank::new(cfg, sample_rate, window_len)?,
        })
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.fb
    }

    pub fn clean_features(&self, clean: &Array2<f64>) -> Result<Array2<f64>> {
        self.fb.log_mel(clean)
    }

    /// Loss and gradient with respect to the unclamped estimate.
    pub fn loss(&self, estimate: &Array2<f64>, clean_features: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        let clamped = estimate.mapv(|x| x.max(0.0));
        let feats = self.fb.log_mel(&clamped)?;
        let value = mse(&feats, clean_features)?;
        let upstream = mse_backward(&feats, clean_features)?;
        let mut grad = self.fb.log_mel_backward(&clamped, &upstream)?;
        Zip::from(&mut grad).and(estimate).for_each(|g, &x| {
            if x <= 0.0 {
                *g = 0.0;
            }
        });
        Ok((value, grad))
    }
}

/// Additive error decomposition of the enhancer output:
/// `S_hat = S + e_s`, `N_hat = N + e_n`.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorDecomposition {
    pub e_s: Array2<f64>,
    pub e_n: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BandError {
    pub lo_bin: usize,
    pub hi_bin: usize,
    pub e_s_abs: f64,
    pub e_n_abs: f64,
}

impl ErrorDecomposition {
    pub fn e_s_abs(&self) -> f64 {
        self.e_s.iter().map(|x| x.abs()).sum()
    }

    pub fn e_n_abs(&self) -> f64 {
        self.e_n.iter().map(|x| x.abs()).sum()
    }

    /// Absolute error sums over `n_bands` contiguous, near-equal bin ranges.
    pub fn per_band(&self, n_bands: usize) -> Vec<BandError> {
        let f = self.e_s.ncols();
        let n_bands = n_bands.clamp(1, f.max(1));
        let col_s = self.e_s.mapv(f64::abs).sum_axis(Axis(0));
        let col_n = self.e_n.mapv(f64::abs).sum_axis(Axis(0));
        (0..n_bands)
            .map(|b| {
                let (lo, hi) = (b * f / n_bands, (b + 1) * f / n_bands);
                BandError {
                    lo_bin: lo,
                    hi_bin: hi,
                    e_s_abs: col_s.slice(ndarray::s![lo..hi]).sum(),
                    e_n_abs: col_n.slice(ndarray::s![lo..hi]).sum(),
                }
            })
            .collect()
    }
}

pub fn error_decomposition(pair: &EnhancedPair, clean: &Array2<f64>, noise: &Array2<f64>) -> Result<ErrorDecomposition> {
    check_same(&pair.s_hat, clean)?;
    check_same(&pair.n_hat, noise)?;
    Ok(ErrorDecomposition {
        e_s: &pair.s_hat - clean,
        e_n: &pair.n_hat - noise,
    })
}

/// One row of the loss / lambda trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub l_enh: f64,
    pub l_refine: f64,
    pub lambda: f64,
    pub e_s_tilde: f64,
    pub e_n_tilde: f64,
    pub l_total: f64,
}

pub fn write_trace_csv(path: impl AsRef<Path>, rows: &[TraceRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(["step", "l_enh", "l_refine", "lambda", "e_s_tilde", "e_n_tilde", "l_total"])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}
