//! Dual-stream spectrogram refinement for mask-based speech enhancement.
//!
//! The pipeline: waveforms are mixed at a target SNR ([`mixer`]), turned into
//! magnitude spectrograms ([`signal`]), enhanced with a learned mask
//! ([`enhance`]), refined by a linear dual-stream residual network
//! ([`dsrnet`]) and trained against a weighted speech-distortion loss
//! ([`loss`], [`train`]). [`eval`] reports spectral errors and SI-SNR.

pub mod checkpoint;
pub mod corpus;
pub mod dsrnet;
pub mod enhance;
pub mod error;
pub mod eval;
pub mod exec;
pub mod loss;
pub mod mel;
pub mod mixer;
pub mod params;
pub mod signal;
pub mod synth;
pub mod train;
pub mod wav;

pub use error::{Error, Result};
pub use exec::Execution;
pub use params::ParamSet;
