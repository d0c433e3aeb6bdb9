//! Argument groups and loaders shared by several subcommands.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use dsrefine::checkpoint::load_checkpoint;
use dsrefine::corpus::{load_examples, synthetic_corpus, Example, SyntheticCorpusConfig};
use dsrefine::dsrnet::DsrnetParams;
use dsrefine::enhance::{EstimatorSpec, MaskEstimatorParams};
use dsrefine::loss::{DownstreamMode, JointLossConfig, LambdaMode};
use dsrefine::mixer::{read_manifest, MagnitudeMode, SnrMode};
use dsrefine::signal::StftConfig;
use dsrefine::train::{OptimizerKind, Regime, TrainConfig};
use dsrefine::Execution;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// A bad combination of arguments that clap cannot express; exits with 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Magnitude {
    /// Magnitude of the STFT of the actual mixture
    Waveform,
    /// Noisy magnitude built as clean plus noise magnitude
    Synthetic,
}

impl From<Magnitude> for MagnitudeMode {
    fn from(m: Magnitude) -> Self {
        match m {
            Magnitude::Waveform => MagnitudeMode::Waveform,
            Magnitude::Synthetic => MagnitudeMode::Synthetic,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct DataArgs {
    /// Corpus manifest written by `simulate`
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub manifest: Option<PathBuf>,
    /// Generate this many synthetic utterances instead of reading a manifest
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Length of each synthetic utterance in seconds
    #[arg(long, default_value_t = 1.0)]
    pub synthetic_seconds: f64,
    /// Seed of the synthetic corpus
    #[arg(long, default_value_t = 0)]
    pub synthetic_seed: u64,
    /// Noisy magnitude construction [default: waveform for manifests, synthetic otherwise]
    #[arg(long, value_enum)]
    pub magnitude: Option<Magnitude>,
}

impl DataArgs {
    pub fn load(&self, exec: Execution) -> Result<Vec<Example>> {
        match (&self.manifest, self.synthetic) {
            (Some(path), _) => {
                let rows = read_manifest(path).with_context(|| format!("reading manifest {}", path.display()))?;
                let mode = self.magnitude.unwrap_or(Magnitude::Waveform).into();
                Ok(load_examples(&rows, StftConfig::default(), mode, exec)?)
            }
            (None, Some(n)) => {
                let cfg = SyntheticCorpusConfig {
                    n_utterances: n,
                    seconds: self.synthetic_seconds,
                    seed: self.synthetic_seed,
                    snr_mode: SnrMode::standard_random(),
                    mode: self.magnitude.unwrap_or(Magnitude::Synthetic).into(),
                    ..Default::default()
                };
                Ok(synthetic_corpus(&cfg, exec)?)
            }
            (None, None) => Err(usage("one of --manifest or --synthetic is required")),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Lstm,
    Mlp,
}

#[derive(Args, Debug, Serialize)]
pub struct ModelArgs {
    /// Mask estimator architecture
    #[arg(long, value_enum, default_value_t = Variant::Lstm)]
    pub variant: Variant,
    /// Number of hidden layers
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    /// Width of each hidden layer
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
}

impl ModelArgs {
    pub fn spec(&self) -> EstimatorSpec {
        match self.variant {
            Variant::Lstm => EstimatorSpec::Recurrent {
                layers: self.layers,
                hidden: self.hidden,
            },
            Variant::Mlp => EstimatorSpec::Mlp {
                hidden: vec![self.hidden; self.layers],
            },
        }
    }

    /// Loads `ckpt` when given, otherwise initialises from `rng`.
    pub fn estimator(&self, ckpt: Option<&Path>, rng: &mut ChaCha8Rng) -> Result<MaskEstimatorParams> {
        match ckpt {
            Some(p) => load_estimator(p),
            None => Ok(MaskEstimatorParams::init(&self.spec(), StftConfig::default().bins(), rng)?),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Args, Debug, Serialize)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// Peak learning rate
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Warmup steps of the learning-rate schedule; 0 keeps it constant
    #[arg(long, default_value_t = 300)]
    pub warmup: usize,
    /// Frames per training chunk
    #[arg(long, default_value_t = 64)]
    pub batch_frames: usize,
    /// Chunks per batch
    #[arg(long, default_value_t = 4)]
    pub batch_chunks: usize,
    /// Global gradient-norm cap; 0 disables clipping
    #[arg(long, default_value_t = 5.0)]
    pub clip: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    /// Seed for initialisation and batch order
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl OptimArgs {
    pub fn train_config(&self, regime: Regime, exec: Execution) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            warmup_steps: self.warmup,
            epochs: self.epochs,
            batch_frames: self.batch_frames,
            batch_chunks: self.batch_chunks,
            seed: self.seed,
            regime,
            optimizer: match self.optimizer {
                OptimizerArg::Adam => OptimizerKind::default(),
                OptimizerArg::Sgd => OptimizerKind::Sgd,
            },
            grad_clip: (self.clip > 0.0).then_some(self.clip),
            exec,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Downstream {
    /// Log-mel feature distance to the clean speech
    Proxy,
    None,
}

#[derive(Args, Debug, Serialize)]
pub struct LossArgs {
    /// Weight of the enhancement loss
    #[arg(long, default_value_t = 300.0)]
    pub alpha: f64,
    /// Weight of the refine loss; 0 drops it
    #[arg(long, default_value_t = 100.0)]
    pub beta: f64,
    /// Speech/noise weighting: dynamic, dynamic-diff (gradient through the weight) or fixed:<v>
    #[arg(long, default_value = "dynamic", value_parser = check_lambda)]
    pub lambda: String,
    #[arg(long, value_enum, default_value_t = Downstream::Proxy)]
    pub downstream: Downstream,
}

impl LossArgs {
    pub fn loss_config(&self) -> Result<JointLossConfig> {
        let cfg = JointLossConfig {
            alpha: self.alpha,
            beta: self.beta,
            lambda_mode: parse_lambda(&self.lambda).map_err(usage)?,
            downstream: match self.downstream {
                Downstream::Proxy => DownstreamMode::FeatureProxy,
                Downstream::None => DownstreamMode::None,
            },
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

pub fn parse_lambda(s: &str) -> std::result::Result<LambdaMode, String> {
    match s {
        "dynamic" => Ok(LambdaMode::Dynamic { differentiate: false }),
        "dynamic-diff" => Ok(LambdaMode::Dynamic { differentiate: true }),
        _ => {
            let v = s
                .strip_prefix("fixed:")
                .ok_or_else(|| format!("expected dynamic, dynamic-diff or fixed:<v>, got {s:?}"))?;
            let v: f64 = v.parse().map_err(|_| format!("bad fixed weight {v:?}"))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("fixed weight {v} outside [0, 1]"));
            }
            Ok(LambdaMode::Fixed(v))
        }
    }
}

fn check_lambda(s: &str) -> std::result::Result<String, String> {
    parse_lambda(s).map(|_| s.to_string())
}

pub fn load_estimator(path: &Path) -> Result<MaskEstimatorParams> {
    let (p, _) = load_checkpoint(path).with_context(|| format!("loading estimator checkpoint {}", path.display()))?;
    Ok(p)
}

pub fn load_dsrnet(path: &Path) -> Result<DsrnetParams> {
    let (p, _) = load_checkpoint(path).with_context(|| format!("loading refine checkpoint {}", path.display()))?;
    Ok(p)
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_forms() {
        assert_eq!(parse_lambda("dynamic"), Ok(LambdaMode::Dynamic { differentiate: false }));
        assert_eq!(parse_lambda("dynamic-diff"), Ok(LambdaMode::Dynamic { differentiate: true }));
        assert_eq!(parse_lambda("fixed:0.5"), Ok(LambdaMode::Fixed(0.5)));
        assert!(parse_lambda("fixed:1.5").is_err());
        assert!(parse_lambda("fixed:x").is_err());
        assert!(parse_lambda("static").is_err());
    }
}
