//! Differentiable inverse STFT and the training objective on the tape.

use declip_autodiff::{Graph, Tensor, Var};
use declip_core::metrics::MAG_FLOOR;
use declip_core::stft::window_square_sum;
use declip_core::{stft, LossBreakdown, LossWeights, MrStftConfig, StftConfig};

use crate::error::{ModelError, Result};

/// Spectrogram batch `[B, 2, F, T]` back to waveforms `[B, out_len]`,
/// matching [`declip_core::istft`].
pub fn istft_var<'g>(spec: Var<'g>, cfg: &StftConfig, out_len: usize) -> Result<Var<'g>> {
    let s = spec.shape();
    if s.len() != 4 || s[1] != 2 || s[2] != cfg.n_bins() {
        return Err(ModelError::InvalidArgument(format!(
            "expected [B, 2, {}, T] spectrogram, got {s:?}",
            cfg.n_bins()
        )));
    }
    let (b, t) = (s[0], s[3]);
    if cfg.n_frames(out_len) != t {
        return Err(ModelError::InvalidArgument(format!(
            "{t} frames cannot produce {out_len} samples"
        )));
    }
    let g = spec.graph();
    let frames = spec.permute(&[0, 3, 1, 2])?.irfft(cfg.fft_size)?;
    let window = g
        .input(Tensor::new(vec![1, 1, cfg.fft_size], cfg.frame_window())?)
        .expand(&[b, t, cfg.fft_size])?;
    let ola = frames.mul(&window)?.overlap_add(cfg.hop)?;
    let norm = window_square_sum(cfg, t);
    let pad = if cfg.center { cfg.pad() } else { 0 };
    // Only the kept span needs window support; the padding may lack it.
    let kept = &norm[pad..pad + out_len];
    if kept.iter().any(|&v| v <= 1e-12) {
        return Err(ModelError::Numerical("window overlap sum vanishes inside the signal".into()));
    }
    let inv: Vec<f64> = norm.iter().map(|&v| if v > 1e-12 { 1.0 / v } else { 0.0 }).collect();
    let inv = g.input(Tensor::new(vec![1, inv.len()], inv)?).expand(&[b, norm.len()])?;
    Ok(ola.mul(&inv)?.slice(1, pad, pad + out_len)?)
}

/// STFT magnitudes `[T, F]` of a waveform `[1, N]` on the tape.
pub fn stft_magnitude_var<'g>(x: Var<'g>, cfg: &StftConfig) -> Result<Var<'g>> {
    let n = x.shape()[1];
    let t = cfg.n_frames(n);
    let g = x.graph();
    let padded = if cfg.center { x.pad_reflect(cfg.pad())? } else { x };
    let frames = padded.frame(cfg.fft_size, cfg.hop)?;
    let window = g
        .input(Tensor::new(vec![1, 1, cfg.fft_size], cfg.frame_window())?)
        .expand(&[1, t, cfg.fft_size])?;
    let mag = frames.mul(&window)?.rfft()?.complex_magnitude(2)?;
    Ok(mag.reshape(&[t, cfg.n_bins()])?)
}

/// Reference magnitudes of `x`, transposed to `[T, F]`.
fn reference_magnitudes(x: &[f64], cfg: &StftConfig) -> Result<Tensor> {
    let spec = stft(x, cfg)?;
    let (f, t) = (spec.n_bins(), spec.n_frames());
    let m = spec.magnitudes();
    let mut out = vec![0.0; f * t];
    for bin in 0..f {
        for frame in 0..t {
            out[frame * f + bin] = m[bin * t + frame];
        }
    }
    Ok(Tensor::new(vec![t, f], out)?)
}

/// The composite objective for one signal: `estimate` is `[1, N]` on the
/// tape, `clean` the target. Returns the scalar loss and its breakdown.
pub fn loss_var<'g>(
    estimate: Var<'g>,
    clean: &[f64],
    weights: &LossWeights,
    mr: &MrStftConfig,
) -> Result<(Var<'g>, LossBreakdown)> {
    let g: &'g Graph = estimate.graph();
    let n = clean.len();
    if estimate.shape() != [1, n] {
        return Err(ModelError::InvalidArgument(format!(
            "estimate shape {:?} does not match a clean signal of {n} samples",
            estimate.shape()
        )));
    }
    let target = g.input(Tensor::new(vec![1, n], clean.to_vec())?);
    let l1 = estimate.sub(&target)?.abs().mean();
    let mut total = l1.scale(weights.lambda1);
    let mut breakdown = LossBreakdown {
        l1: l1.item()?,
        ..Default::default()
    };
    for cfg in &mr.resolutions {
        let reference = reference_magnitudes(clean, cfg)?;
        let ref_norm = reference.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        if ref_norm == 0.0 {
            return Err(ModelError::Core(declip_core::Error::DivisionGuard(
                "reference magnitude is identically zero".into(),
            )));
        }
        let log_ref = reference.map(|v| v.max(MAG_FLOOR).ln());
        let est = stft_magnitude_var(estimate, cfg)?;
        let sc = est
            .sub(&g.input(reference))?
            .square()
            .sum()
            .sqrt()?
            .scale(1.0 / ref_norm);
        let mag = est.clamp_min(MAG_FLOOR).log()?.sub(&g.input(log_ref))?.abs().mean();
        breakdown.sc.push(sc.item()?);
        breakdown.mag.push(mag.item()?);
        total = total.add(&sc.add(&mag)?.scale(weights.lambda2))?;
    }
    breakdown.total = total.item()?;
    Ok((total, breakdown))
}
