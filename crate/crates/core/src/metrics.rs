//! Evaluation metrics and the reference (non-differentiable) training loss.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::signal::{ClipMask, Waveform};
use crate::stft::{stft, ComplexSpectrogram, StftConfig};

/// Floor applied to magnitudes before the logarithm in [`mag_loss`].
pub const MAG_FLOOR: f64 = 1e-7;

/// SDR in dB between two equal-length slices, `+inf` on an exact match.
pub fn sdr_slices(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(invalid(format!(
            "length mismatch: reference {} vs estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    let signal: f64 = reference.iter().map(|v| v * v).sum();
    if signal == 0.0 {
        return Err(invalid("reference signal is silent"));
    }
    let noise: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(r, e)| (r - e) * (r - e))
        .sum();
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

/// `20 log10(||ref|| / ||ref - est||)`.
pub fn sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    sdr_slices(reference.samples(), estimate.samples())
}

/// SDR restricted to the clipped samples of `mask`.
pub fn sdr_c(reference: &Waveform, estimate: &Waveform, mask: &ClipMask) -> Result<f64> {
    if mask.len() != reference.len() || reference.len() != estimate.len() {
        return Err(invalid(format!(
            "length mismatch: reference {}, estimate {}, mask {}",
            reference.len(),
            estimate.len(),
            mask.len()
        )));
    }
    if mask.clipped_count() == 0 {
        return Err(Error::NoClippedRegion);
    }
    let (r, e): (Vec<f64>, Vec<f64>) = mask
        .clipped_indices()
        .map(|i| (reference.samples()[i], estimate.samples()[i]))
        .unzip();
    sdr_slices(&r, &e)
}

fn check_shapes(a: &ComplexSpectrogram, b: &ComplexSpectrogram) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(invalid(format!(
            "spectrogram shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Spectral convergence: `|| |X| - |X^| ||_F / || |X| ||_F`.
pub fn sc_loss(reference: &ComplexSpectrogram, estimate: &ComplexSpectrogram) -> Result<f64> {
    check_shapes(reference, estimate)?;
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (r, e) in reference.magnitudes().iter().zip(estimate.magnitudes()) {
        diff += (r - e) * (r - e);
        norm += r * r;
    }
    if norm == 0.0 {
        return Err(Error::DivisionGuard(
            "reference magnitude is identically zero".into(),
        ));
    }
    Ok((diff / norm).sqrt())
}

/// Mean absolute difference of floored natural-log magnitudes.
pub fn mag_loss(reference: &ComplexSpectrogram, estimate: &ComplexSpectrogram) -> Result<f64> {
    check_shapes(reference, estimate)?;
    let mr = reference.magnitudes();
    let me = estimate.magnitudes();
    let total: f64 = mr
        .iter()
        .zip(&me)
        .map(|(r, e)| (r.max(MAG_FLOOR).ln() - e.max(MAG_FLOOR).ln()).abs())
        .sum();
    Ok(total / mr.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        for (name, v) in [("lambda1", lambda1), ("lambda2", lambda2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(Self { lambda1, lambda2 })
    }
}

impl Default for LossWeights {
    /// Waveform L1 weighted 100, spectral terms weighted 1.
    fn default() -> Self {
        Self {
            lambda1: 100.0,
            lambda2: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrStftConfig {
    pub resolutions: Vec<StftConfig>,
}

impl MrStftConfig {
    pub fn new(resolutions: Vec<StftConfig>) -> Result<Self> {
        if resolutions.is_empty() {
            return Err(invalid("at least one STFT resolution is required"));
        }
        for r in &resolutions {
            r.validate()?;
        }
        Ok(Self { resolutions })
    }

    /// Build from `(fft_size, hop)` pairs with `win_length = fft_size`.
    pub fn from_pairs(pairs: &[(usize, usize)]) -> Result<Self> {
        let resolutions = pairs
            .iter()
            .map(|&(fft, hop)| StftConfig::new(fft, hop))
            .collect::<Result<Vec<_>>>()?;
        Self::new(resolutions)
    }
}

impl Default for MrStftConfig {
    /// FFT sizes 512/1024/2048 with hops 50/120/240.
    fn default() -> Self {
        Self::from_pairs(&[(512, 50), (1024, 120), (2048, 240)]).expect("valid resolutions")
    }
}

/// Per-term breakdown of [`total_loss`]; `sc` and `mag` follow the order of
/// [`MrStftConfig::resolutions`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub l1: f64,
    pub sc: Vec<f64>,
    pub mag: Vec<f64>,
}

impl LossBreakdown {
    pub fn sc_sum(&self) -> f64 {
        self.sc.iter().sum()
    }

    pub fn mag_sum(&self) -> f64 {
        self.mag.iter().sum()
    }
}

/// `lambda1 * mean|x - x^| + lambda2 * sum_i (sc_i + mag_i)`.
pub fn total_loss(
    clean: &[f64],
    estimate: &[f64],
    weights: &LossWeights,
    mr: &MrStftConfig,
) -> Result<LossBreakdown> {
    if clean.len() != estimate.len() {
        return Err(invalid(format!(
            "length mismatch: clean {} vs estimate {}",
            clean.len(),
            estimate.len()
        )));
    }
    if clean.is_empty() {
        return Err(invalid("cannot compute a loss on empty signals"));
    }
    let l1 = clean
        .iter()
        .zip(estimate)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / clean.len() as f64;
    let mut out = LossBreakdown {
        l1,
        ..Default::default()
    };
    for cfg in &mr.resolutions {
        let x = stft(clean, cfg)?;
        let xh = stft(estimate, cfg)?;
        out.sc.push(sc_loss(&x, &xh)?);
        out.mag.push(mag_loss(&x, &xh)?);
    }
    out.total = weights.lambda1 * l1 + weights.lambda2 * (out.sc_sum() + out.mag_sum());
    Ok(out)
}
