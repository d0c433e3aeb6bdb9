pub mod eval;
pub mod gradcheck;
pub mod simulate;
pub mod spectrogram;
pub mod sweep;
pub mod synth;
pub mod train;
