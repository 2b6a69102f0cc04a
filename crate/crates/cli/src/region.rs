//! Error split between the clipped and the reliable samples of a signal,
//! plus a columnar dump for plotting reference and estimate against the
//! clipping level.

use std::io::Write;

use declip_core::{ClipMask, Waveform};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionReport {
    pub n_samples: usize,
    pub n_clipped: usize,
    /// `sum (ref - est)^2` over clipped samples.
    pub clipped_error: f64,
    /// The same sum over reliable samples.
    pub unclipped_error: f64,
}

fn check_lengths(reference: &Waveform, estimate: &Waveform, mask: &ClipMask) -> Result<()> {
    if reference.len() != estimate.len() || reference.len() != mask.len() {
        return Err(HarnessError::Data(format!(
            "length mismatch: reference {}, estimate {}, mask {}",
            reference.len(),
            estimate.len(),
            mask.len()
        )));
    }
    Ok(())
}

pub fn region_report(reference: &Waveform, estimate: &Waveform, mask: &ClipMask) -> Result<RegionReport> {
    check_lengths(reference, estimate, mask)?;
    let mut report = RegionReport {
        n_samples: reference.len(),
        n_clipped: 0,
        clipped_error: 0.0,
        unclipped_error: 0.0,
    };
    for ((r, e), label) in reference.samples().iter().zip(estimate.samples()).zip(mask.labels()) {
        let d = (r - e) * (r - e);
        if label.is_clipped() {
            report.n_clipped += 1;
            report.clipped_error += d;
        } else {
            report.unclipped_error += d;
        }
    }
    Ok(report)
}

/// One row per sample: `time,reference,estimate,clipped,theta_hi,theta_lo`.
pub fn write_dump<W: Write>(out: W, reference: &Waveform, estimate: &Waveform, mask: &ClipMask) -> Result<()> {
    check_lengths(reference, estimate, mask)?;
    let rate = reference.sample_rate() as f64;
    let theta = mask.theta();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "reference", "estimate", "clipped", "theta_hi", "theta_lo"])?;
    for (i, ((r, e), label)) in reference.samples().iter().zip(estimate.samples()).zip(mask.labels()).enumerate() {
        w.write_record([
            format!("{:.6}", i as f64 / rate),
            format!("{r:.9}"),
            format!("{e:.9}"),
            u8::from(label.is_clipped()).to_string(),
            format!("{theta:.9}"),
            format!("{:.9}", -theta),
        ])?;
    }
    w.flush()?;
    Ok(())
}
