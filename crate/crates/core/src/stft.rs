//! STFT analysis and weighted overlap-add synthesis.
//!
//! Spectrograms are stored as a real `2 x F x T` tensor (real part in
//! channel 0, imaginary part in channel 1, time fastest), which is the layout
//! the declipping network consumes. The forward transform is un-normalised;
//! synthesis divides by the summed squared window so that
//! `istft(stft(x)) == x` whenever the squared window overlap-adds to a
//! constant at the configured hop.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fft::{irfft_into, rfft_into};

/// Tolerance on the overlap-add flatness used by [`StftConfig::is_cola`].
const COLA_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    /// Periodic Hann, `0.5 - 0.5 cos(2 pi n / L)`.
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn samples(self, len: usize) -> Vec<f64> {
        match self {
            Self::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
                .collect(),
            Self::Rectangular => vec![1.0; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub win_length: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub center: bool,
}

impl StftConfig {
    /// Hann window of `fft_size` samples, centred frames.
    pub fn new(fft_size: usize, hop: usize) -> Result<Self> {
        let cfg = Self {
            fft_size,
            win_length: fft_size,
            hop,
            window: WindowKind::Hann,
            center: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 512-point frames with a 128-sample hop.
    pub fn model_default() -> Self {
        Self::new(512, 128).expect("valid default")
    }

    /// 128-point frames with a 32-sample hop, used by the toy model.
    pub fn toy() -> Self {
        Self::new(128, 32).expect("valid toy config")
    }

    /// Structural checks needed by analysis. Synthesis additionally requires
    /// [`StftConfig::is_cola`].
    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 2 || !self.fft_size.is_power_of_two() {
            return Err(invalid(format!(
                "fft_size must be a power of two >= 2, got {}",
                self.fft_size
            )));
        }
        if self.win_length == 0 || self.win_length > self.fft_size {
            return Err(invalid(format!(
                "win_length {} must be in 1..={}",
                self.win_length, self.fft_size
            )));
        }
        if self.hop == 0 || self.hop > self.win_length {
            return Err(invalid(format!(
                "hop {} must be in 1..={} (win_length)",
                self.hop, self.win_length
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Reflect padding applied on each side when `center` is set.
    pub fn pad(&self) -> usize {
        if self.center {
            self.fft_size / 2
        } else {
            0
        }
    }

    pub fn n_frames(&self, len: usize) -> usize {
        let padded = len + 2 * self.pad();
        if padded < self.fft_size {
            0
        } else {
            1 + (padded - self.fft_size) / self.hop
        }
    }

    /// Analysis window zero-padded (centred) to `fft_size`.
    pub fn frame_window(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.fft_size];
        let offset = (self.fft_size - self.win_length) / 2;
        w[offset..offset + self.win_length].copy_from_slice(&self.window.samples(self.win_length));
        w
    }

    /// Whether the squared window overlap-adds to a constant at this hop.
    pub fn is_cola(&self) -> bool {
        let w = self.frame_window();
        let mut acc = vec![0.0; self.hop];
        for (n, v) in w.iter().enumerate() {
            acc[n % self.hop] += v * v;
        }
        let max = acc.iter().cloned().fold(f64::MIN, f64::max);
        let min = acc.iter().cloned().fold(f64::MAX, f64::min);
        max > 0.0 && (max - min) <= COLA_REL_TOL * max
    }
}

/// Index into a signal of length `n` under whole-sample symmetric
/// reflection (`[.., x2, x1, x0, x1, x2, ..]`), valid for any offset.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Reflect-pads `x` by `pad` samples on each side.
pub fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    (0..n + 2 * pad)
        .map(|i| x[reflect_index(i as isize - pad as isize, n)])
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    data: Vec<f64>,
    n_bins: usize,
    n_frames: usize,
    config: StftConfig,
}

impl ComplexSpectrogram {
    pub fn from_parts(data: Vec<f64>, n_bins: usize, n_frames: usize, config: StftConfig) -> Result<Self> {
        if n_bins != config.n_bins() {
            return Err(invalid(format!(
                "{} bins does not match fft size {}",
                n_bins, config.fft_size
            )));
        }
        if data.len() != 2 * n_bins * n_frames {
            return Err(invalid(format!(
                "spectrogram data has {} values, expected 2x{}x{}",
                data.len(),
                n_bins,
                n_frames
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("spectrogram contains non-finite values"));
        }
        Ok(Self {
            data,
            n_bins,
            n_frames,
            config,
        })
    }

    pub fn zeros(n_frames: usize, config: StftConfig) -> Self {
        let n_bins = config.n_bins();
        Self {
            data: vec![0.0; 2 * n_bins * n_frames],
            n_bins,
            n_frames,
            config,
        }
    }

    /// `[2, F, T]`.
    pub fn shape(&self) -> [usize; 3] {
        [2, self.n_bins, self.n_frames]
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn real(&self) -> &[f64] {
        &self.data[..self.n_bins * self.n_frames]
    }

    pub fn imag(&self) -> &[f64] {
        &self.data[self.n_bins * self.n_frames..]
    }

    pub fn get(&self, bin: usize, frame: usize) -> Complex64 {
        let i = bin * self.n_frames + frame;
        Complex64::new(self.real()[i], self.imag()[i])
    }

    /// Magnitudes in `F x T` order.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.real()
            .iter()
            .zip(self.imag())
            .map(|(re, im)| re.hypot(*im))
            .collect()
    }

    fn same_layout(&self, other: &Self) -> bool {
        self.n_bins == other.n_bins && self.n_frames == other.n_frames
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if !self.same_layout(other) {
            return Err(invalid(format!(
                "spectrogram shapes {:?} and {:?} differ",
                self.shape(),
                other.shape()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Self { data, ..*self })
    }
}

/// Short-time Fourier transform of `x`.
pub fn stft(x: &[f64], cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    if x.is_empty() {
        return Err(invalid("cannot transform an empty signal"));
    }
    let padded = if cfg.center {
        reflect_pad(x, cfg.pad())
    } else {
        x.to_vec()
    };
    let n_frames = cfg.n_frames(x.len());
    if n_frames == 0 {
        return Err(invalid(format!(
            "signal of {} samples is shorter than one {}-point frame",
            x.len(),
            cfg.fft_size
        )));
    }
    let n_bins = cfg.n_bins();
    let window = cfg.frame_window();
    let mut data = vec![0.0; 2 * n_bins * n_frames];
    let (re, im) = data.split_at_mut(n_bins * n_frames);
    let mut frame = vec![0.0; cfg.fft_size];
    let mut buf = Vec::with_capacity(cfg.fft_size);
    let mut spec = vec![Complex64::new(0.0, 0.0); n_bins];
    for t in 0..n_frames {
        let start = t * cfg.hop;
        for (k, f) in frame.iter_mut().enumerate() {
            *f = padded[start + k] * window[k];
        }
        rfft_into(&frame, &mut buf, &mut spec);
        for (f, c) in spec.iter().enumerate() {
            re[f * n_frames + t] = c.re;
            im[f * n_frames + t] = c.im;
        }
    }
    Ok(ComplexSpectrogram {
        data,
        n_bins,
        n_frames,
        config: *cfg,
    })
}

/// Sum of squared analysis windows over the padded timeline.
pub fn window_square_sum(cfg: &StftConfig, n_frames: usize) -> Vec<f64> {
    let window = cfg.frame_window();
    let total = (n_frames.max(1) - 1) * cfg.hop + cfg.fft_size;
    let mut acc = vec![0.0; total];
    for t in 0..n_frames {
        for (k, w) in window.iter().enumerate() {
            acc[t * cfg.hop + k] += w * w;
        }
    }
    acc
}

/// Inverse STFT by weighted overlap-add, trimmed to `out_len` samples.
pub fn istft(spec: &ComplexSpectrogram, out_len: usize) -> Result<Vec<f64>> {
    let cfg = spec.config;
    cfg.validate()?;
    if !cfg.is_cola() {
        return Err(invalid(format!(
            "window/hop pair (fft {}, win {}, hop {}) does not satisfy overlap-add; cannot invert",
            cfg.fft_size, cfg.win_length, cfg.hop
        )));
    }
    let n_frames = spec.n_frames;
    if cfg.n_frames(out_len) != n_frames {
        return Err(invalid(format!(
            "output length {out_len} implies {} frames, spectrogram has {n_frames}",
            cfg.n_frames(out_len)
        )));
    }
    let window = cfg.frame_window();
    let norm = window_square_sum(&cfg, n_frames);
    let pad = cfg.pad();
    let mut acc = vec![0.0; norm.len()];
    let mut column = vec![Complex64::new(0.0, 0.0); spec.n_bins];
    let mut buf = Vec::with_capacity(cfg.fft_size);
    let mut frame = vec![0.0; cfg.fft_size];
    for t in 0..n_frames {
        for (f, c) in column.iter_mut().enumerate() {
            *c = spec.get(f, t);
        }
        irfft_into(&column, cfg.fft_size, &mut buf, &mut frame);
        for (k, v) in frame.iter().enumerate() {
            acc[t * cfg.hop + k] += v * window[k];
        }
    }
    let mut out = Vec::with_capacity(out_len);
    for n in pad..pad + out_len {
        let d = norm[n];
        if d <= 1e-12 {
            return Err(Error::Numerical(format!(
                "overlap-add normaliser vanishes at padded sample {n}"
            )));
        }
        out.push(acc[n] / d);
    }
    Ok(out)
}
