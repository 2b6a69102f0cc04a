//! Waveforms, the hard clipping operator and reliable-sample masks.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Maximum bisection steps used by [`find_threshold`].
pub const THRESHOLD_MAX_ITERS: usize = 100;
/// Acceptance band of [`find_threshold`] around the requested SDR, in dB.
pub const THRESHOLD_TOL_DB: f64 = 1e-3;

/// A mono, finite, non-empty sampled signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("waveform must contain at least one sample"));
        }
        if sample_rate == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Per-sample clipping state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum ClipLabel {
    Reliable = 0,
    ClippedHigh = 1,
    ClippedLow = 2,
}

impl ClipLabel {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Self::Reliable),
            1 => Some(Self::ClippedHigh),
            2 => Some(Self::ClippedLow),
            _ => None,
        }
    }

    pub fn is_clipped(self) -> bool {
        self != Self::Reliable
    }
}

/// Labels of a clipped waveform together with the threshold that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipMask {
    labels: Vec<ClipLabel>,
    theta: f64,
}

impl ClipMask {
    pub fn new(labels: Vec<ClipLabel>, theta: f64) -> Result<Self> {
        check_theta(theta)?;
        Ok(Self { labels, theta })
    }

    pub fn all_reliable(len: usize, theta: f64) -> Result<Self> {
        Self::new(vec![ClipLabel::Reliable; len], theta)
    }

    pub fn labels(&self) -> &[ClipLabel] {
        &self.labels
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn clipped_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_clipped()).count()
    }

    pub fn clipped_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_clipped())
            .map(|(i, _)| i)
    }

    /// Checks the mask against the waveform it claims to describe.
    pub fn validate_against(&self, y: &Waveform) -> Result<()> {
        if self.labels.len() != y.len() {
            return Err(invalid(format!(
                "mask length {} does not match waveform length {}",
                self.labels.len(),
                y.len()
            )));
        }
        for (i, (&l, &v)) in self.labels.iter().zip(y.samples()).enumerate() {
            let ok = match l {
                ClipLabel::Reliable => v.abs() <= self.theta,
                ClipLabel::ClippedHigh => v == self.theta,
                ClipLabel::ClippedLow => v == -self.theta,
            };
            if !ok {
                return Err(invalid(format!(
                    "sample {i} = {v} inconsistent with label {l:?} at theta {}",
                    self.theta
                )));
            }
        }
        Ok(())
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta.is_finite() && theta > 0.0) {
        return Err(invalid(format!("clipping threshold must be positive and finite, got {theta}")));
    }
    Ok(())
}

/// Hard-clips `x` at `±theta`.
///
/// Samples with `|x[n]| == theta` are left untouched and labelled reliable.
pub fn clip(x: &Waveform, theta: f64) -> Result<(Waveform, ClipMask)> {
    check_theta(theta)?;
    let mut labels = Vec::with_capacity(x.len());
    let samples = x
        .samples()
        .iter()
        .map(|&v| {
            if v.abs() <= theta {
                labels.push(ClipLabel::Reliable);
                v
            } else if v > 0.0 {
                labels.push(ClipLabel::ClippedHigh);
                theta
            } else {
                labels.push(ClipLabel::ClippedLow);
                -theta
            }
        })
        .collect();
    Ok((
        Waveform {
            samples,
            sample_rate: x.sample_rate(),
        },
        ClipMask { labels, theta },
    ))
}

fn clipped_sdr(x: &[f64], theta: f64) -> f64 {
    let mut ref_energy = 0.0;
    let mut err_energy = 0.0;
    for &v in x {
        ref_energy += v * v;
        let excess = v.abs() - theta;
        if excess > 0.0 {
            err_energy += excess * excess;
        }
    }
    if err_energy == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (ref_energy / err_energy).log10()
    }
}

/// Finds the threshold whose clipping of `x` lands on `target_db` SDR.
///
/// SDR grows monotonically with the threshold, from 0 dB as `theta -> 0+` to
/// +inf at `theta = max|x|`, so plain bisection on `(0, max|x|]` suffices.
/// A target of `+inf` returns the peak itself.
pub fn find_threshold(x: &Waveform, target_db: f64) -> Result<f64> {
    let peak = x.peak();
    if peak == 0.0 {
        return Err(invalid("cannot search a threshold for a silent signal"));
    }
    if target_db == f64::INFINITY {
        return Ok(peak);
    }
    if !target_db.is_finite() {
        return Err(invalid(format!("target SDR must be finite or +inf, got {target_db}")));
    }
    if target_db <= 0.0 {
        return Err(Error::UnreachableTarget {
            target: target_db,
            min: 0.0,
        });
    }

    let samples = x.samples();
    let (mut lo, mut hi) = (0.0, peak);
    for _ in 0..THRESHOLD_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        let achieved = clipped_sdr(samples, mid);
        if (achieved - target_db).abs() <= THRESHOLD_TOL_DB {
            return Ok(mid);
        }
        if achieved < target_db {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // The interval is below f64 resolution here; SDR jumps between the two
    // neighbouring thresholds (e.g. a signal with very few distinct peaks).
    let best = [lo, hi]
        .into_iter()
        .filter(|&t| t > 0.0)
        .min_by(|a, b| {
            let ea = (clipped_sdr(samples, *a) - target_db).abs();
            let eb = (clipped_sdr(samples, *b) - target_db).abs();
            ea.total_cmp(&eb)
        })
        .unwrap_or(hi);
    if (clipped_sdr(samples, best) - target_db).abs() <= 0.01 {
        Ok(best)
    } else {
        Err(Error::Numerical(format!(
            "threshold search for {target_db} dB did not converge"
        )))
    }
}

/// Recovers a clip mask from a clipped signal alone: samples with
/// `|y[n]| >= theta - eps` count as clipped on their side.
pub fn mask_from_clipped(y: &Waveform, theta: f64, eps: f64) -> Result<ClipMask> {
    check_theta(theta)?;
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(invalid(format!("eps must be non-negative, got {eps}")));
    }
    let level = theta - eps;
    let labels = y
        .samples()
        .iter()
        .map(|&v| {
            if v != 0.0 && v.abs() >= level {
                if v > 0.0 {
                    ClipLabel::ClippedHigh
                } else {
                    ClipLabel::ClippedLow
                }
            } else {
                ClipLabel::Reliable
            }
        })
        .collect();
    Ok(ClipMask { labels, theta })
}

/// SDR of `clip(x, theta)` against `x`, computed without materialising the clip.
pub fn sdr_at_threshold(x: &Waveform, theta: f64) -> Result<f64> {
    check_theta(theta)?;
    if x.energy() == 0.0 {
        return Err(invalid("reference signal is silent"));
    }
    Ok(clipped_sdr(x.samples(), theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::sdr;
    use proptest::prelude::*;
    use ClipLabel::*;

    fn wave(v: &[f64]) -> Waveform {
        Waveform::new(v.to_vec(), 16_000).unwrap()
    }

    fn sine(freq: f64, secs: f64, amp: f64) -> Waveform {
        let n = (16_000.0 * secs) as usize;
        let s = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin())
            .collect();
        Waveform::new(s, 16_000).unwrap()
    }

    #[test]
    fn clip_matches_hand_example() {
        let (y, m) = clip(&wave(&[0.5, -0.2, 0.9]), 0.6).unwrap();
        assert_eq!(y.samples(), &[0.5, -0.2, 0.6]);
        assert_eq!(m.labels(), &[Reliable, Reliable, ClippedHigh]);
    }

    #[test]
    fn threshold_above_peak_is_identity() {
        let x = wave(&[0.1, -0.7, 0.3]);
        let (y, m) = clip(&x, 0.7).unwrap();
        assert_eq!(y, x);
        assert_eq!(m.clipped_count(), 0);
    }

    #[test]
    fn ties_are_reliable_and_zero_never_clips() {
        let (y, m) = clip(&wave(&[0.5, -0.5, 0.0, -0.6]), 0.5).unwrap();
        assert_eq!(y.samples(), &[0.5, -0.5, 0.0, -0.5]);
        assert_eq!(m.labels(), &[Reliable, Reliable, Reliable, ClippedLow]);
        m.validate_against(&y).unwrap();
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(clip(&wave(&[0.1]), 0.0).is_err());
        assert!(clip(&wave(&[0.1]), -1.0).is_err());
        assert!(clip(&wave(&[0.1]), f64::NAN).is_err());
        assert!(Waveform::new(vec![0.0, f64::NAN], 16_000).is_err());
        assert!(Waveform::new(vec![], 16_000).is_err());
    }

    #[test]
    fn sine_hits_seven_db() {
        let x = sine(220.0, 1.0, 1.0);
        let theta = find_threshold(&x, 7.0).unwrap();
        let (y, _) = clip(&x, theta).unwrap();
        assert!((sdr(&x, &y).unwrap() - 7.0).abs() <= 0.01);
    }

    #[test]
    fn sine_hits_three_db_and_thresholds_order() {
        let x = sine(220.0, 1.0, 1.0);
        let t3 = find_threshold(&x, 3.0).unwrap();
        let (y, _) = clip(&x, t3).unwrap();
        assert!((sdr(&x, &y).unwrap() - 3.0).abs() <= 0.01);
        let t1 = find_threshold(&x, 1.0).unwrap();
        let t15 = find_threshold(&x, 15.0).unwrap();
        assert!(t15 > t1);
    }

    #[test]
    fn infinite_target_returns_peak() {
        let x = sine(220.0, 0.1, 0.8);
        let theta = find_threshold(&x, f64::INFINITY).unwrap();
        assert_eq!(theta, x.peak());
        assert_eq!(clip(&x, theta).unwrap().0, x);
    }

    #[test]
    fn unreachable_targets_report_range() {
        let x = sine(220.0, 0.1, 1.0);
        match find_threshold(&x, -2.0) {
            Err(Error::UnreachableTarget { min, .. }) => assert_eq!(min, 0.0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(find_threshold(&wave(&[0.0, 0.0]), 3.0).is_err());
    }

    #[test]
    fn mask_from_all_zero_is_reliable() {
        let m = mask_from_clipped(&wave(&[0.0; 8]), 0.3, 0.0).unwrap();
        assert_eq!(m.clipped_count(), 0);
    }

    #[test]
    fn mask_from_clipped_recovers_clip_mask() {
        let x = sine(330.0, 0.05, 1.0);
        let (y, m) = clip(&x, 0.6).unwrap();
        let inferred = mask_from_clipped(&y, 0.6, 0.0).unwrap();
        assert_eq!(inferred, m);
    }

    proptest! {
        #[test]
        fn clip_invariants(xs in prop::collection::vec(-2.0f64..2.0, 1..200), theta in 0.01f64..1.5) {
            let x = wave(&xs);
            let (y, m) = clip(&x, theta).unwrap();
            prop_assert_eq!(&clip(&y, theta).unwrap().0, &y);
            for (i, (&a, &b)) in xs.iter().zip(y.samples()).enumerate() {
                prop_assert!(b.abs() <= theta);
                if m.labels()[i] == Reliable {
                    prop_assert_eq!(a, b);
                }
                if a != 0.0 {
                    prop_assert_eq!(a.signum(), b.signum());
                }
            }
            m.validate_against(&y).unwrap();
        }

        #[test]
        fn sdr_is_monotone_in_theta(xs in prop::collection::vec(-1.0f64..1.0, 2..200), a in 0.01f64..1.0, b in 0.01f64..1.0) {
            let x = wave(&xs);
            prop_assume!(x.energy() > 0.0);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let s_lo = sdr_at_threshold(&x, lo).unwrap();
            let s_hi = sdr_at_threshold(&x, hi).unwrap();
            prop_assert!(s_lo <= s_hi + 1e-12);
        }

        #[test]
        fn inferred_mask_agrees_outside_eps_band(xs in prop::collection::vec(-1.0f64..1.0, 1..300), theta in 0.05f64..0.9, eps in 0.0f64..0.05) {
            let x = wave(&xs);
            let (y, m) = clip(&x, theta).unwrap();
            let inferred = mask_from_clipped(&y, theta, eps).unwrap();
            for (n, &v) in xs.iter().enumerate() {
                let in_band = v.abs() >= theta - eps && v.abs() <= theta;
                if !in_band {
                    prop_assert_eq!(m.labels()[n], inferred.labels()[n]);
                }
            }
        }
    }
}
