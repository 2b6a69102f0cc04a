use declip_core::{LossWeights, MrStftConfig, StftConfig};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Waveform front-end geometry, tied to the companion STFT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TgramConfig {
    pub f_bins: usize,
    pub win_length: usize,
    pub hop: usize,
    pub n_refine_layers: usize,
    pub leaky_slope: f64,
}

impl TgramConfig {
    /// Kernel = window length, stride = hop, one output channel per bin.
    pub fn for_stft(stft: &StftConfig) -> Self {
        Self {
            f_bins: stft.n_bins(),
            win_length: stft.win_length,
            hop: stft.hop,
            n_refine_layers: 3,
            leaky_slope: 0.01,
        }
    }

    pub fn validate(&self, stft: &StftConfig) -> Result<()> {
        if self.f_bins != stft.n_bins() || self.win_length != stft.win_length || self.hop != stft.hop {
            return Err(config_err(format!(
                "front-end (bins {}, kernel {}, stride {}) does not match the STFT (bins {}, window {}, hop {})",
                self.f_bins,
                self.win_length,
                self.hop,
                stft.n_bins(),
                stft.win_length,
                stft.hop
            )));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(config_err(format!("leaky slope {} must be finite and >= 0", self.leaky_slope)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding width `C` between the encoder and decoder.
    pub channels: usize,
    /// Number of F/T transformer block pairs.
    pub n_blocks: usize,
    pub n_heads: usize,
    pub sdb_groups: usize,
    /// Hidden width of the feed-forward layers is `ffn_mult * channels`.
    pub ffn_mult: usize,
    pub stft: StftConfig,
    pub tgram: TgramConfig,
    /// When false the temporal feature channel is fed as zeros.
    pub use_tgram: bool,
    /// Scale each input to unit peak before the network and undo it after.
    pub peak_normalize: bool,
    /// Add the input spectrogram to the decoder output.
    pub residual: bool,
    /// Copy input samples below the input peak straight to the output; the
    /// network only fills in samples sitting at the peak.
    pub keep_reliable: bool,
}

impl ModelConfig {
    /// Desk-scale defaults: 16 channels, 2 blocks, 128-point STFT with hop 32.
    pub fn toy() -> Self {
        let stft = StftConfig::toy();
        Self {
            channels: 16,
            n_blocks: 2,
            n_heads: 4,
            sdb_groups: 4,
            ffn_mult: 2,
            stft,
            tgram: TgramConfig::for_stft(&stft),
            use_tgram: true,
            peak_normalize: true,
            residual: true,
            keep_reliable: true,
        }
    }

    /// 64 channels on a 512-point STFT with hop 128.
    pub fn full_scale() -> Self {
        let stft = StftConfig::model_default();
        Self {
            channels: 64,
            n_blocks: 4,
            stft,
            tgram: TgramConfig::for_stft(&stft),
            ..Self::toy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        if !self.stft.is_cola() {
            return Err(config_err("model STFT must be invertible by overlap-add"));
        }
        self.tgram.validate(&self.stft)?;
        if self.channels == 0 || self.n_heads == 0 || self.sdb_groups == 0 || self.ffn_mult == 0 {
            return Err(config_err("channels, heads, groups and ffn_mult must be positive"));
        }
        if self.channels % self.n_heads != 0 || self.channels % self.sdb_groups != 0 {
            return Err(config_err(format!(
                "{} channels must be divisible by {} heads and {} groups",
                self.channels, self.n_heads, self.sdb_groups
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.stft.n_bins()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub theta_range: (f64, f64),
    pub weights: LossWeights,
    pub mrstft: MrStftConfig,
    /// Samples per training crop.
    pub crop_len: usize,
    /// Stop after this many epochs without a new best validation loss.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 4,
            epochs: 20,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            theta_range: (0.01, 0.125),
            weights: LossWeights::default(),
            mrstft: MrStftConfig::default(),
            crop_len: 2000,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(config_err(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        let (lo, hi) = self.theta_range;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(config_err(format!("theta range ({lo}, {hi}) must be positive and ordered")));
        }
        if self.batch == 0 || self.epochs == 0 {
            return Err(config_err("batch and epochs must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return Err(config_err("adam moments must lie in [0, 1) and eps must be positive"));
        }
        if self.weight_decay < 0.0 {
            return Err(config_err("weight decay must be >= 0"));
        }
        let longest = self
            .mrstft
            .resolutions
            .iter()
            .map(|r| r.fft_size / 2 + 1)
            .max()
            .unwrap_or(0);
        if self.crop_len <= longest {
            return Err(config_err(format!(
                "crop of {} samples is too short for the loss STFTs (needs > {longest})",
                self.crop_len
            )));
        }
        Ok(())
    }
}
