//! Signal-level building blocks for speech declipping.
//!
//! This crate holds everything that does not need gradients: the hard
//! clipping operator and its reliable-sample masks, the STFT pair used to
//! build complex spectrograms, the evaluation metrics (SDR and its
//! clipped-region variant) together with the spectral losses, WAV and mask
//! sidecar I/O, and the A-SPADE sparse declipper used as a baseline.

pub mod aspade;
mod error;
mod fft;
pub mod io;
pub mod metrics;
pub mod signal;
pub mod stft;

pub use error::{Error, Result};
pub use signal::{clip, find_threshold, mask_from_clipped, ClipLabel, ClipMask, Waveform};
pub use stft::{istft, stft, ComplexSpectrogram, StftConfig, WindowKind};
pub use metrics::{sdr, sdr_c, total_loss, LossBreakdown, LossWeights, MrStftConfig};

/// Sample rate every stage of the pipeline works at.
pub const SAMPLE_RATE: u32 = 16_000;
