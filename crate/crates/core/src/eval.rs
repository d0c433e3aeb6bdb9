//! Spectral errors, SI-SNR on resynthesized waveforms and per-SNR summaries.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::dsrnet::{dsrnet_forward, DsrnetParams};
use crate::enhance::{apply_mask, estimate_mask, mse, oracle_mask, EnhancedPair, Mask, MaskEstimatorParams};
use crate::error::{Error, Result};
use crate::exec::{map_ordered, Execution};
use crate::loss::error_decomposition;
use crate::signal::{synthesize, MagnitudeSpectrogram, Waveform};

pub const SI_SNR_CAP_DB: f64 = 100.0;

/// Scale-invariant SNR in dB after removing the mean of both signals,
/// clamped to `[-100, 100]`.
pub fn si_snr(estimate: &Waveform, reference: &Waveform) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::ShapeMismatch {
            expected: (1, reference.len()),
            got: (1, estimate.len()),
        });
    }
    let centered = |w: &Waveform| {
        let m = w.samples().iter().sum::<f64>() / w.len() as f64;
        w.samples().iter().map(|x| x - m).collect::<Vec<_>>()
    };
    let (est, reference) = (centered(estimate), centered(reference));
    let ref_energy: f64 = reference.iter().map(|x| x * x).sum();
    if ref_energy <= 0.0 {
        return Err(Error::ZeroEnergy("reference"));
    }
    let k = est.iter().zip(&reference).map(|(e, r)| e * r).sum::<f64>() / ref_energy;
    let (mut target, mut residual) = (0.0, 0.0);
    for (e, r) in est.iter().zip(&reference) {
        let t = k * r;
        target += t * t;
        residual += (e - t) * (e - t);
    }
    if residual <= 0.0 {
        return Ok(SI_SNR_CAP_DB);
    }
    if target <= 0.0 {
        return Ok(-SI_SNR_CAP_DB);
    }
    Ok((10.0 * (target / residual).log10()).clamp(-SI_SNR_CAP_DB, SI_SNR_CAP_DB))
}

/// Where the enhancement mask comes from.
#[derive(Clone, Copy, Debug)]
pub enum MaskSource<'a> {
    /// Ideal ratio mask from the reference clean and noise magnitudes.
    Oracle,
    Estimator(&'a MaskEstimatorParams),
}

impl MaskSource<'_> {
    pub fn mask(&self, ex: &Example) -> Result<Mask> {
        match self {
            MaskSource::Oracle => oracle_mask(ex.clean.frames(), ex.noise.frames()),
            MaskSource::Estimator(p) => Ok(estimate_mask(p, ex.noisy.frames())?.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub utt_id: String,
    pub snr_db: f64,
    pub spectral_mse_enhanced: f64,
    pub spectral_mse_refined: f64,
    pub e_s_abs: f64,
    pub e_n_abs: f64,
    pub si_snr_noisy: f64,
    pub si_snr_enhanced: f64,
    pub si_snr_refined: f64,
}

impl EvalRow {
    fn all_finite(&self) -> bool {
        [
            self.spectral_mse_enhanced,
            self.spectral_mse_refined,
            self.e_s_abs,
            self.e_n_abs,
            self.si_snr_noisy,
            self.si_snr_enhanced,
            self.si_snr_refined,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

/// Mean metrics over one SNR condition; `group` is the SNR in dB or `all`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrSummary {
    pub group: String,
    pub count: usize,
    pub spectral_mse_enhanced: f64,
    pub spectral_mse_refined: f64,
    /// refined minus enhanced; negative means refinement helped.
    pub delta_spectral_mse: f64,
    pub si_snr_enhanced: f64,
    pub si_snr_refined: f64,
    pub delta_si_snr: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct EvalReport {
    /// Sorted by `utt_id`.
    pub rows: Vec<EvalRow>,
}

fn summarize(group: String, rows: &[&EvalRow]) -> SnrSummary {
    let n = rows.len().max(1) as f64;
    let mean = |f: fn(&EvalRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    let (me, mr) = (mean(|r| r.spectral_mse_enhanced), mean(|r| r.spectral_mse_refined));
    let (se, sr) = (mean(|r| r.si_snr_enhanced), mean(|r| r.si_snr_refined));
    SnrSummary {
        group,
        count: rows.len(),
        spectral_mse_enhanced: me,
        spectral_mse_refined: mr,
        delta_spectral_mse: mr - me,
        si_snr_enhanced: se,
        si_snr_refined: sr,
        delta_si_snr: sr - se,
    }
}

impl EvalReport {
    pub fn mean_spectral_mse_enhanced(&self) -> f64 {
        summarize("all".into(), &self.rows.iter().collect::<Vec<_>>()).spectral_mse_enhanced
    }

    pub fn mean_spectral_mse_refined(&self) -> f64 {
        summarize("all".into(), &self.rows.iter().collect::<Vec<_>>()).spectral_mse_refined
    }

    /// One summary per distinct SNR in ascending order, then `all`.
    pub fn by_snr(&self) -> Vec<SnrSummary> {
        let mut groups: BTreeMap<i64, (f64, Vec<&EvalRow>)> = BTreeMap::new();
        for r in &self.rows {
            // keyed on millibels so float SNRs group exactly and sort numerically
            let key = (r.snr_db * 1000.0).round() as i64;
            groups.entry(key).or_insert_with(|| (r.snr_db, Vec::new())).1.push(r);
        }
        let mut out: Vec<SnrSummary> = groups
            .into_values()
            .map(|(snr, rows)| summarize(format!("{snr}"), &rows))
            .collect();
        out.push(summarize("all".into(), &self.rows.iter().collect::<Vec<_>>()));
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_rows(path.as_ref(), &self.rows)
    }

    pub fn write_summary_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_rows(path.as_ref(), &self.by_snr())
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Enhanced and refined spectrograms for one utterance. Without refine
/// parameters the refined pair is the enhanced pair.
pub fn run_pipeline(ex: &Example, mask: MaskSource<'_>, ds: Option<&DsrnetParams>) -> Result<(EnhancedPair, Array2<f64>)> {
    let pair = apply_mask(&mask.mask(ex)?, ex.noisy.frames())?;
    let s_tilde = match ds {
        Some(p) => dsrnet_forward(p, &pair)?.1.s_tilde,
        None => pair.s_hat.clone(),
    };
    Ok((pair, s_tilde))
}

fn evaluate_one(ex: &Example, mask: MaskSource<'_>, ds: Option<&DsrnetParams>) -> Result<EvalRow> {
    let (pair, s_tilde) = run_pipeline(ex, mask, ds)?;
    let clean = ex.clean.frames();
    let decomposition = error_decomposition(&pair, clean, ex.noise.frames())?;
    let meta = *ex.noisy.meta();
    let enhanced_wave = synthesize(&MagnitudeSpectrogram::from_clamped(&pair.s_hat, meta)?, &ex.noisy_phase)?;
    let refined_wave = synthesize(&MagnitudeSpectrogram::from_clamped(&s_tilde, meta)?, &ex.noisy_phase)?;
    let row = EvalRow {
        utt_id: ex.utt_id.clone(),
        snr_db: ex.snr_db,
        spectral_mse_enhanced: mse(&pair.s_hat, clean)?,
        spectral_mse_refined: mse(&s_tilde, clean)?,
        e_s_abs: decomposition.e_s_abs(),
        e_n_abs: decomposition.e_n_abs(),
        si_snr_noisy: si_snr(&ex.mixture_wave, &ex.clean_wave)?,
        si_snr_enhanced: si_snr(&enhanced_wave, &ex.clean_wave)?,
        si_snr_refined: si_snr(&refined_wave, &ex.clean_wave)?,
    };
    if !row.all_finite() {
        return Err(Error::NonFiniteLoss(format!("metrics for {}", row.utt_id)));
    }
    Ok(row)
}

pub fn evaluate(
    examples: &[Example],
    mask: MaskSource<'_>,
    ds: Option<&DsrnetParams>,
    exec: Execution,
) -> Result<EvalReport> {
    if let (Some(p), MaskSource::Estimator(se)) = (ds, mask) {
        if p.bins() != se.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: (se.input_dim(), se.input_dim()),
                got: (p.bins(), p.bins()),
            });
        }
    }
    let mut rows = map_ordered(exec, examples, |ex| evaluate_one(ex, mask, ds))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
    Ok(EvalReport { rows })
}
