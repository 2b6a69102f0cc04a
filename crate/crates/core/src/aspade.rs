//! A-SPADE: analysis-sparse audio declipping by ADMM.
//!
//! The signal is cut into overlapping frames. Each frame containing clipped
//! samples is restored independently by alternating between hard
//! thresholding of its (twice oversampled, Parseval-normalised) DFT and a
//! projection onto the set of signals consistent with the clipped
//! observation, relaxing the sparsity level by a fixed step each iteration.
//! Frames are recombined by windowed overlap-add and the result is projected
//! onto the consistency set once more, so reliable samples come out
//! bit-identical to the input.

use rustfft::num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::fft::plan;
use crate::signal::{ClipLabel, ClipMask, Waveform};
use crate::stft::WindowKind;

/// DFT oversampling of the analysis operator.
const REDUNDANCY: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpadeParams {
    pub frame_len: usize,
    pub hop: usize,
    pub max_iters: usize,
    /// Coefficients added to the support per iteration.
    pub sparsity_step: usize,
    pub sparsity_start: usize,
    /// Stop once `||A x - z||_2` falls to this level.
    pub tol: f64,
}

impl Default for SpadeParams {
    fn default() -> Self {
        Self {
            frame_len: 1024,
            hop: 256,
            max_iters: 500,
            sparsity_step: 1,
            sparsity_start: 1,
            tol: 0.1,
        }
    }
}

impl SpadeParams {
    pub fn validate(&self) -> Result<()> {
        if self.frame_len < 2 || self.hop == 0 || self.max_iters == 0 || self.sparsity_step == 0 || self.sparsity_start == 0 {
            return Err(invalid(format!("A-SPADE parameters must be positive: {self:?}")));
        }
        if self.hop > self.frame_len {
            return Err(invalid(format!(
                "hop {} exceeds frame length {}",
                self.hop, self.frame_len
            )));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(invalid(format!("tolerance must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameReport {
    pub start: isize,
    pub iterations: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub converged: bool,
}

/// Per-frame diagnostics; frames without clipped samples are not listed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AspadeReport {
    pub total_frames: usize,
    pub frames: Vec<FrameReport>,
}

impl AspadeReport {
    pub fn all_converged(&self) -> bool {
        self.frames.iter().all(|f| f.converged)
    }

    pub fn total_iterations(&self) -> usize {
        self.frames.iter().map(|f| f.iterations).sum()
    }
}

struct Constraint<'a> {
    observed: &'a [f64],
    labels: &'a [ClipLabel],
    theta: f64,
}

impl Constraint<'_> {
    fn project(&self, v: &mut [f64]) {
        for ((x, &y), &l) in v.iter_mut().zip(self.observed).zip(self.labels) {
            *x = match l {
                ClipLabel::Reliable => y,
                ClipLabel::ClippedHigh => x.max(self.theta),
                ClipLabel::ClippedLow => x.min(-self.theta),
            };
        }
    }
}

struct FrameSolver {
    len: usize,
    coeffs: usize,
    scale: f64,
    buf: Vec<Complex64>,
    mags: Vec<(f64, usize)>,
}

impl FrameSolver {
    fn new(len: usize) -> Self {
        let coeffs = REDUNDANCY * len;
        Self {
            len,
            coeffs,
            scale: 1.0 / (coeffs as f64).sqrt(),
            buf: vec![Complex64::default(); coeffs],
            mags: Vec::with_capacity(coeffs / 2 + 1),
        }
    }

    /// `out = A x`.
    fn analysis(&mut self, x: &[f64], out: &mut [Complex64]) {
        out.iter_mut().for_each(|c| *c = Complex64::default());
        for (o, &v) in out.iter_mut().zip(x) {
            o.re = v;
        }
        plan(self.coeffs, false).process(out);
        out.iter_mut().for_each(|c| *c *= self.scale);
    }

    /// `out = Re(A^H z)`.
    fn synthesis(&mut self, z: &[Complex64], out: &mut [f64]) {
        self.buf.copy_from_slice(z);
        plan(self.coeffs, true).process(&mut self.buf);
        for (o, c) in out.iter_mut().zip(&self.buf) {
            *o = c.re * self.scale;
        }
    }

    /// Keeps the `k` largest one-sided coefficients (and their mirrors).
    fn hard_threshold(&mut self, z: &mut [Complex64], k: usize) {
        let half = self.coeffs / 2;
        if k > half {
            return;
        }
        self.mags.clear();
        self.mags.extend((0..=half).map(|i| (z[i].norm_sqr(), i)));
        self.mags
            .select_nth_unstable_by(k, |a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in &self.mags[k..] {
            z[i] = Complex64::default();
            if i != 0 && i != half {
                z[self.coeffs - i] = Complex64::default();
            }
        }
    }

    fn solve(&mut self, frame: &mut [f64], constraint: &Constraint, p: &SpadeParams) -> FrameReport {
        let m = self.coeffs;
        let mut u = vec![Complex64::default(); m];
        let mut a = vec![Complex64::default(); m];
        let mut z = vec![Complex64::default(); m];
        let mut k = p.sparsity_start;
        let mut report = FrameReport {
            start: 0,
            iterations: 0,
            initial_residual: f64::NAN,
            final_residual: f64::NAN,
            converged: false,
        };
        let mut x = frame.to_vec();
        let mut best = (f64::INFINITY, x.clone());
        for it in 1..=p.max_iters {
            self.analysis(&x, &mut a);
            for i in 0..m {
                z[i] = a[i] + u[i];
            }
            self.hard_threshold(&mut z, k);
            let target: Vec<Complex64> = z.iter().zip(&u).map(|(z, u)| z - u).collect();
            self.synthesis(&target, &mut x[..self.len]);
            constraint.project(&mut x);
            self.analysis(&x, &mut a);
            let residual = a
                .iter()
                .zip(&z)
                .map(|(a, z)| (a - z).norm_sqr())
                .sum::<f64>()
                .sqrt();
            if it == 1 {
                report.initial_residual = residual;
            }
            report.iterations = it;
            report.final_residual = residual;
            if residual < best.0 {
                best = (residual, x.clone());
            }
            if residual <= p.tol {
                report.converged = true;
                break;
            }
            for i in 0..m {
                u[i] += a[i] - z[i];
            }
            k += p.sparsity_step;
        }
        if report.converged {
            frame.copy_from_slice(&x);
        } else {
            frame.copy_from_slice(&best.1);
        }
        report
    }
}

/// Restores `y` given its clip mask. Non-convergence is reported, not raised.
pub fn declip_aspade(y: &Waveform, mask: &ClipMask, p: &SpadeParams) -> Result<(Waveform, AspadeReport)> {
    p.validate()?;
    mask.validate_against(y)?;
    let n = y.len();
    let len = p.frame_len;
    let lead = len - p.hop;

    // Zero padding on both sides; padded samples are reliable zeros.
    let mut padded = vec![0.0; lead];
    padded.extend_from_slice(y.samples());
    let mut labels = vec![ClipLabel::Reliable; lead];
    labels.extend_from_slice(mask.labels());
    let n_frames = (n + lead - 1) / p.hop + 1;
    let total = (n_frames - 1) * p.hop + len;
    padded.resize(total, 0.0);
    labels.resize(total, ClipLabel::Reliable);

    let window = WindowKind::Hann.samples(len);
    let mut acc = vec![0.0; total];
    let mut weight = vec![0.0; total];
    let mut solver = FrameSolver::new(len);
    let mut report = AspadeReport {
        total_frames: n_frames,
        frames: Vec::new(),
    };
    let mut frame = vec![0.0; len];
    for t in 0..n_frames {
        let s = t * p.hop;
        frame.copy_from_slice(&padded[s..s + len]);
        let frame_labels = &labels[s..s + len];
        if frame_labels.iter().any(|l| l.is_clipped()) {
            let constraint = Constraint {
                observed: &padded[s..s + len],
                labels: frame_labels,
                theta: mask.theta(),
            };
            let mut fr = solver.solve(&mut frame, &constraint, p);
            fr.start = s as isize - lead as isize;
            report.frames.push(fr);
        }
        for k in 0..len {
            acc[s + k] += window[k] * frame[k];
            weight[s + k] += window[k];
        }
    }

    let mut out: Vec<f64> = (lead..lead + n)
        .map(|i| if weight[i] > 0.0 { acc[i] / weight[i] } else { padded[i] })
        .collect();
    Constraint {
        observed: y.samples(),
        labels: mask.labels(),
        theta: mask.theta(),
    }
    .project(&mut out);
    Ok((Waveform::new(out, y.sample_rate())?, report))
}
