//! Optimizers, batching and the training regimes.
//!
//! A batch is a handful of chunks, each a contiguous run of at most
//! `batch_frames` frames from a single utterance; recurrent state is reset at
//! every chunk. Chunk forward and backward passes run in parallel, results
//! are reduced in chunk order, so training is bit-reproducible for a given
//! seed regardless of the worker count.

pub mod gradcheck;
mod optim;

use std::time::Instant;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use optim::{clip_global_norm, Optimizer, OptimizerKind};

use crate::corpus::Example;
use crate::dsrnet::{dsrnet_backward, dsrnet_forward, DsrnetInit, DsrnetParams};
use crate::enhance::{
    enh_loss, enh_loss_backward, estimate_mask, split_masked, mask_estimator_backward, EnhancedPair, EstimatorSpec, Mask, MaskCache,
    MaskEstimatorParams,
};
use crate::error::{Error, Result};
use crate::exec::{map_ordered, Execution};
use crate::loss::{joint_loss, refine_errors, refine_loss, DownstreamMode, FeatureProxy, JointLossConfig, LambdaMode, TraceRow};
use crate::mel::MelConfig;
use crate::params::ParamSet;
use gradcheck::{compare, numeric_gradient, BlockError, GradcheckShape, FD_STEP};

pub const REFERENCE_WARMUP_STEPS: usize = 30_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Front end fixed; only the refine network is updated.
    Frozen,
    #[default]
    Joint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub epochs: usize,
    pub batch_frames: usize,
    /// Chunks per batch.
    pub batch_chunks: usize,
    pub seed: u64,
    pub regime: Regime,
    pub optimizer: OptimizerKind,
    /// Global L2 norm cap on the gradient; `None` disables clipping.
    pub grad_clip: Option<f64>,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            warmup_steps: REFERENCE_WARMUP_STEPS,
            epochs: 70,
            batch_frames: 64,
            batch_chunks: 4,
            seed: 0,
            regime: Regime::Joint,
            optimizer: OptimizerKind::default(),
            grad_clip: Some(5.0),
            exec: Execution::default(),
        }
    }
}

impl TrainConfig {
    /// Settings sized for a workstation run over a small corpus.
    pub fn desk() -> Self {
        Self {
            warmup_steps: 300,
            epochs: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.batch_frames == 0 || self.batch_chunks == 0 {
            return Err(Error::InvalidConfig("batch_frames and batch_chunks must be >= 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::InvalidConfig("grad_clip must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Noam-style warmup: linear ramp to `learning_rate` at `warmup_steps`, then
/// inverse square-root decay. Steps are 1-based.
pub fn lr_schedule(step: usize, cfg: &TrainConfig) -> f64 {
    if cfg.warmup_steps == 0 {
        return cfg.learning_rate;
    }
    let (s, w) = (step.max(1) as f64, cfg.warmup_steps as f64);
    cfg.learning_rate * (s / w).min((w / s).sqrt())
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub trace: Vec<TraceRow>,
    /// Objective over the whole corpus before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub wall_seconds: f64,
    pub checkpoint: Option<std::path::PathBuf>,
}

impl TrainReport {
    pub fn steps(&self) -> usize {
        self.trace.len()
    }
}

#[derive(Clone, Copy, Debug)]
struct Chunk {
    utt: usize,
    start: usize,
    len: usize,
}

fn chunks_of(examples: &[Example], frames: usize) -> Vec<Chunk> {
    let mut out = Vec::new();
    for (utt, ex) in examples.iter().enumerate() {
        let t = ex.n_frames();
        let mut start = 0;
        while start < t {
            let len = frames.min(t - start);
            out.push(Chunk { utt, start, len });
            start += len;
        }
    }
    out
}

fn whole_utterances(examples: &[Example]) -> Vec<Chunk> {
    chunks_of(examples, usize::MAX)
}

/// What the batch computation optimizes.
#[derive(Clone, Copy, Debug)]
enum Objective {
    Enhancement,
    Joint(JointLossConfig),
}

#[derive(Clone, Debug)]
struct BatchOutcome {
    l_enh: f64,
    l_refine: f64,
    l_down: f64,
    l_total: f64,
    lambda: f64,
    e_s_tilde: f64,
    e_n_tilde: f64,
    se_grad: Option<MaskEstimatorParams>,
    ds_grad: Option<DsrnetParams>,
}

struct BatchInputs<'a> {
    examples: &'a [Example],
    clean_features: Option<&'a [Array2<f64>]>,
    proxy: Option<&'a FeatureProxy>,
}

fn rows<'a>(a: &'a Array2<f64>, c: &Chunk) -> ArrayView2<'a, f64> {
    a.slice(s![c.start..c.start + c.len, ..])
}

fn stack(parts: Vec<ArrayView2<'_, f64>>) -> Array2<f64> {
    concatenate(Axis(0), &parts).expect("chunks share the bin count")
}

#[allow(clippy::too_many_arguments)]
fn batch_step(
    se: &MaskEstimatorParams,
    ds: Option<&DsrnetParams>,
    inputs: &BatchInputs<'_>,
    chunks: &[Chunk],
    objective: Objective,
    want_se_grad: bool,
    want_ds_grad: bool,
    exec: Execution,
) -> Result<BatchOutcome> {
    let ex = inputs.examples;
    let noisy_parts: Vec<Array2<f64>> = chunks.iter().map(|c| rows(ex[c.utt].noisy.frames(), c).to_owned()).collect();
    let forwards: Vec<Result<(Mask, MaskCache)>> = map_ordered(exec, &noisy_parts, |y| estimate_mask(se, y));
    let mut masks = Vec::with_capacity(chunks.len());
    let mut caches = Vec::with_capacity(chunks.len());
    for f in forwards {
        let (m, c) = f?;
        masks.push(m.into_values());
        caches.push(c);
    }

    let mask = stack(masks.iter().map(|m| m.view()).collect());
    let noisy = stack(noisy_parts.iter().map(|m| m.view()).collect());
    let clean = stack(chunks.iter().map(|c| rows(ex[c.utt].clean.frames(), c)).collect());
    let noise = stack(chunks.iter().map(|c| rows(ex[c.utt].noise.frames(), c)).collect());
    let EnhancedPair { s_hat, n_hat } = split_masked(&mask, &noisy);

    let l_enh = enh_loss(&s_hat, &clean)?;
    let d_enh = enh_loss_backward(&s_hat, &clean)?;

    let (cfg, alpha) = match objective {
        Objective::Enhancement => (None, 1.0),
        Objective::Joint(cfg) => (Some(cfg), cfg.alpha),
    };

    let mut out = BatchOutcome {
        l_enh,
        l_refine: 0.0,
        l_down: 0.0,
        l_total: l_enh,
        lambda: 0.5,
        e_s_tilde: 0.0,
        e_n_tilde: 0.0,
        se_grad: None,
        ds_grad: None,
    };

    let mut d_s_hat = d_enh * alpha;
    if let Some(cfg) = cfg {
        let pair = EnhancedPair {
            s_hat: s_hat.clone(),
            n_hat: n_hat.clone(),
        };
        let refined = match ds {
            Some(p) => Some(dsrnet_forward(p, &pair)?),
            None => None,
        };
        let speech_estimate = refined.as_ref().map(|r| &r.1.s_tilde).unwrap_or(&s_hat);

        let mut d_speech = Array2::<f64>::zeros(s_hat.dim());
        if cfg.downstream == DownstreamMode::FeatureProxy {
            let proxy = inputs.proxy.expect("proxy present for feature-proxy objective");
            let feats = inputs.clean_features.expect("clean features precomputed");
            let target = stack(chunks.iter().map(|c| rows(&feats[c.utt], c)).collect());
            let (l_down, d_down) = proxy.loss(speech_estimate, &target)?;
            out.l_down = l_down;
            d_speech += &d_down;
        }

        match &refined {
            Some((_, r, cache)) => {
                let rl = refine_loss(&r.s_tilde, &r.n_tilde, &clean, &noise, &cfg)?;
                out.l_refine = rl.loss;
                out.lambda = rl.lambda;
                out.e_s_tilde = rl.errors.e_s_tilde;
                out.e_n_tilde = rl.errors.e_n_tilde;
                let d_s_tilde = d_speech + &(rl.d_s_tilde * cfg.beta);
                let d_n_tilde = rl.d_n_tilde * cfg.beta;
                let params = ds.expect("refined implies params");
                let g = dsrnet_backward(params, cache, &d_s_tilde, &d_n_tilde)?;
                // N_hat = Y - S_hat
                d_s_hat += &g.d_s_hat;
                d_s_hat -= &g.d_n_hat;
                if want_ds_grad {
                    out.ds_grad = Some(g.params);
                }
            }
            None => {
                let errs = refine_errors(&s_hat, &n_hat, &clean, &noise)?;
                out.lambda = match cfg.lambda_mode {
                    LambdaMode::Fixed(v) => v,
                    LambdaMode::Dynamic { .. } => errs.lambda,
                };
                out.e_s_tilde = errs.e_s_tilde;
                out.e_n_tilde = errs.e_n_tilde;
                d_s_hat += &d_speech;
            }
        }
        let refine_term = if ds.is_some() { out.l_refine } else { 0.0 };
        out.l_total = joint_loss(out.l_down, out.l_enh, refine_term, &cfg)?;
    }

    if want_se_grad {
        let d_mask = d_s_hat * &noisy;
        let mut offsets = Vec::with_capacity(chunks.len());
        let mut at = 0;
        for c in chunks {
            offsets.push(at);
            at += c.len;
        }
        let jobs: Vec<(usize, usize)> = offsets.iter().zip(chunks).map(|(&o, c)| (o, c.len)).collect();
        let grads = map_ordered(exec, &jobs.iter().zip(&caches).collect::<Vec<_>>(), |((o, len), cache)| {
            mask_estimator_backward(se, cache, &d_mask.slice(s![*o..*o + *len, ..]).to_owned())
        });
        let mut total: Option<MaskEstimatorParams> = None;
        for g in grads {
            let g = g?;
            match total.as_mut() {
                Some(t) => t.add_assign(&g),
                None => total = Some(g),
            }
        }
        out.se_grad = total;
    }
    Ok(out)
}

fn prepare_proxy(examples: &[Example], cfg: Option<&JointLossConfig>) -> Result<(Option<FeatureProxy>, Option<Vec<Array2<f64>>>)> {
    match cfg {
        Some(c) if c.downstream == DownstreamMode::FeatureProxy && !examples.is_empty() => {
            let meta = examples[0].clean.meta();
            let proxy = FeatureProxy::new(&MelConfig::default(), meta.sample_rate, meta.window_len)?;
            let feats = examples
                .iter()
                .map(|e| proxy.clean_features(e.clean.frames()))
                .collect::<Result<Vec<_>>>()?;
            Ok((Some(proxy), Some(feats)))
        }
        _ => Ok((None, None)),
    }
}

fn check_corpus(examples: &[Example], se: &MaskEstimatorParams) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::InvalidConfig("training corpus is empty".into()));
    }
    for e in examples {
        if e.n_bins() != se.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: (e.n_frames(), se.input_dim()),
                got: e.noisy.dim(),
            });
        }
    }
    Ok(())
}

struct Session<'a> {
    examples: &'a [Example],
    cfg: &'a TrainConfig,
    objective: Objective,
    proxy: Option<FeatureProxy>,
    clean_features: Option<Vec<Array2<f64>>>,
}

impl Session<'_> {
    fn inputs(&self) -> BatchInputs<'_> {
        BatchInputs {
            examples: self.examples,
            clean_features: self.clean_features.as_deref(),
            proxy: self.proxy.as_ref(),
        }
    }

    fn corpus_loss(&self, se: &MaskEstimatorParams, ds: Option<&DsrnetParams>) -> Result<BatchOutcome> {
        let chunks = whole_utterances(self.examples);
        batch_step(se, ds, &self.inputs(), &chunks, self.objective, false, false, self.cfg.exec)
    }

    fn run(&self, se: &mut MaskEstimatorParams, mut ds: Option<&mut DsrnetParams>) -> Result<TrainReport> {
        let started = Instant::now();
        let train_se = self.cfg.regime == Regime::Joint || matches!(self.objective, Objective::Enhancement);
        let initial = self.corpus_loss(se, ds.as_deref())?.l_total;
        let mut report = TrainReport {
            initial_loss: initial,
            final_loss: initial,
            ..TrainReport::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let mut se_opt = Optimizer::new(self.cfg.optimizer);
        let mut ds_opt = Optimizer::new(self.cfg.optimizer);
        let inputs = self.inputs();
        let mut step = 0;
        for _ in 0..self.cfg.epochs {
            let mut chunks = chunks_of(self.examples, self.cfg.batch_frames);
            chunks.shuffle(&mut rng);
            for batch in chunks.chunks(self.cfg.batch_chunks) {
                step += 1;
                let out = batch_step(
                    se,
                    ds.as_deref(),
                    &inputs,
                    batch,
                    self.objective,
                    train_se,
                    ds.is_some(),
                    self.cfg.exec,
                )?;
                if !out.l_total.is_finite() {
                    return Err(Error::Diverged { step, loss: out.l_total });
                }
                let lr = lr_schedule(step, self.cfg);
                let mut se_grad = out.se_grad.clone();
                let mut ds_grad = out.ds_grad.clone();
                if let Some(max_norm) = self.cfg.grad_clip {
                    clip_global_norm(se_grad.as_mut(), ds_grad.as_mut(), max_norm);
                }
                if let Some(g) = &se_grad {
                    se_opt.step(se, g, lr);
                }
                if let (Some(p), Some(g)) = (ds.as_deref_mut(), &ds_grad) {
                    ds_opt.step(p, g, lr);
                }
                report.trace.push(TraceRow {
                    step,
                    l_enh: out.l_enh,
                    l_refine: out.l_refine,
                    lambda: out.lambda,
                    e_s_tilde: out.e_s_tilde,
                    e_n_tilde: out.e_n_tilde,
                    l_total: out.l_total,
                });
            }
        }
        if step > 0 {
            let fin = self.corpus_loss(se, ds.as_deref())?.l_total;
            if !fin.is_finite() {
                return Err(Error::Diverged { step, loss: fin });
            }
            report.final_loss = fin;
        }
        report.wall_seconds = started.elapsed().as_secs_f64();
        Ok(report)
    }
}

/// Pre-trains the front end on the enhancement MSE alone.
pub fn train_se(examples: &[Example], se: &mut MaskEstimatorParams, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    check_corpus(examples, se)?;
    Session {
        examples,
        cfg,
        objective: Objective::Enhancement,
        proxy: None,
        clean_features: None,
    }
    .run(se, None)
}

/// Optimizes `L_down + alpha L_enh + beta L_refine`. Without a refine
/// network the downstream term sees the enhanced speech directly. In the
/// frozen regime the front end is left untouched.
pub fn train_joint(
    examples: &[Example],
    se: &mut MaskEstimatorParams,
    ds: Option<&mut DsrnetParams>,
    cfg: &TrainConfig,
    loss_cfg: &JointLossConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    loss_cfg.validate()?;
    check_corpus(examples, se)?;
    if let Some(p) = ds.as_deref() {
        if p.bins() != se.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: (se.input_dim(), se.input_dim()),
                got: (p.bins(), p.bins()),
            });
        }
    }
    let (proxy, clean_features) = prepare_proxy(examples, Some(loss_cfg))?;
    Session {
        examples,
        cfg,
        objective: Objective::Joint(*loss_cfg),
        proxy,
        clean_features,
    }
    .run(se, ds)
}

/// Corpus-level loss terms for a trained model, without gradients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CorpusLosses {
    pub l_enh: f64,
    pub l_refine: f64,
    pub l_down: f64,
    pub l_total: f64,
    pub lambda: f64,
}

pub fn corpus_losses(
    examples: &[Example],
    se: &MaskEstimatorParams,
    ds: Option<&DsrnetParams>,
    loss_cfg: &JointLossConfig,
    exec: Execution,
) -> Result<CorpusLosses> {
    check_corpus(examples, se)?;
    let (proxy, feats) = prepare_proxy(examples, Some(loss_cfg))?;
    let inputs = BatchInputs {
        examples,
        clean_features: feats.as_deref(),
        proxy: proxy.as_ref(),
    };
    let out = batch_step(se, ds, &inputs, &whole_utterances(examples), Objective::Joint(*loss_cfg), false, false, exec)?;
    Ok(CorpusLosses {
        l_enh: out.l_enh,
        l_refine: out.l_refine,
        l_down: out.l_down,
        l_total: out.l_total,
        lambda: out.lambda,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub final_proxy_loss: f64,
    pub final_l_enh: f64,
}

/// Trains the front end without a refine network once per `alpha`, each
/// run starting from the same initial parameters and seed, and reports the
/// resulting feature-proxy loss.
pub fn sweep_alpha(
    examples: &[Example],
    values: &[f64],
    se_init: &MaskEstimatorParams,
    cfg: &TrainConfig,
    loss_cfg: &JointLossConfig,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("alpha sweep needs at least one value".into()));
    }
    let base = JointLossConfig {
        downstream: DownstreamMode::FeatureProxy,
        ..*loss_cfg
    };
    map_ordered(cfg.exec, values, |&alpha| {
        let run_cfg = JointLossConfig { alpha, ..base };
        let mut se = se_init.clone();
        train_joint(examples, &mut se, None, cfg, &run_cfg)?;
        let fin = corpus_losses(examples, &se, None, &run_cfg, cfg.exec)?;
        Ok(SweepRow {
            alpha,
            final_proxy_loss: fin.l_down,
            final_l_enh: fin.l_enh,
        })
    })
    .into_iter()
    .collect()
}

pub fn write_sweep_csv(path: impl AsRef<std::path::Path>, rows: &[SweepRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Finite-difference check of the full pipeline: estimator, mask, refine
/// network, refine loss with a differentiated lambda, and feature proxy.
pub(crate) fn end_to_end_gradcheck(rng: &mut ChaCha8Rng, shape: GradcheckShape) -> Result<Vec<BlockError>> {
    use crate::signal::{MagnitudeSpectrogram, SpecMeta};

    let (t, f) = (shape.frames, shape.bins);
    let window_len = 2 * (f - 1);
    let meta = SpecMeta {
        window_len,
        hop_len: 1,
        sample_rate: 16000,
        signal_len: t - 1,
    };
    let mag = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
        MagnitudeSpectrogram::new(Array2::from_shape_simple_fn((t, f), || rng.gen_range(lo..hi)), meta)
    };
    let clean = mag(rng, 0.2, 2.0)?;
    let noise = mag(rng, 0.2, 2.0)?;
    let noisy = MagnitudeSpectrogram::new(clean.frames() + noise.frames(), meta)?;
    let example = Example {
        utt_id: "fd".into(),
        snr_db: 0.0,
        noisy,
        clean,
        noise,
        noisy_phase: Array2::zeros((t, f)),
        clean_wave: crate::signal::Waveform::new(vec![0.0; t], 16000)?,
        mixture_wave: crate::signal::Waveform::new(vec![0.0; t], 16000)?,
    };
    let examples = std::slice::from_ref(&example);

    let se = MaskEstimatorParams::init(&EstimatorSpec::Recurrent { layers: 1, hidden: shape.hidden }, f, rng)?;
    let mut ds = DsrnetParams::init(f, DsrnetInit::Random, false, rng);
    ds.scale(0.2);
    let loss_cfg = JointLossConfig {
        alpha: 3.0,
        beta: 2.0,
        lambda_mode: LambdaMode::Dynamic { differentiate: true },
        downstream: DownstreamMode::FeatureProxy,
    };
    let mel = MelConfig {
        n_mels: 2,
        ..MelConfig::default()
    };
    let proxy = FeatureProxy::new(&mel, 16000, window_len)?;
    let feats = vec![proxy.clean_features(example.clean.frames())?];
    let inputs = BatchInputs {
        examples,
        clean_features: Some(&feats),
        proxy: Some(&proxy),
    };
    let chunks = whole_utterances(examples);
    let objective = Objective::Joint(loss_cfg);
    let exec = Execution::Sequential;
    let out = batch_step(&se, Some(&ds), &inputs, &chunks, objective, true, true, exec)?;
    let total = |s: &MaskEstimatorParams, d: &DsrnetParams| {
        batch_step(s, Some(d), &inputs, &chunks, objective, false, false, exec)
            .expect("finite")
            .l_total
    };
    let num_se = numeric_gradient(&se, FD_STEP, |p| total(p, &ds));
    let num_ds = numeric_gradient(&ds, FD_STEP, |p| total(&se, p));
    let mut blocks = compare(out.se_grad.as_ref().expect("requested"), &num_se);
    blocks.extend(compare(out.ds_grad.as_ref().expect("requested"), &num_ds));
    Ok(blocks)
}

#[cfg(test)]
mod tests;
