//! WAV files and the clip-mask sidecar format.
//!
//! Mask sidecars are an 8-byte header (`b"CMSK"` followed by the sample
//! count as little-endian `u32`) and then one byte per sample:
//! 0 = reliable, 1 = clipped high, 2 = clipped low. The threshold is not
//! stored.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use hound::{SampleFormat, WavSpec};

use crate::error::{Error, Result};
use crate::signal::{ClipLabel, ClipMask, Waveform};

pub const MASK_MAGIC: &[u8; 4] = b"CMSK";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// Reads a mono WAV file, optionally insisting on a sample rate.
pub fn read_wav(path: impl AsRef<Path>, expected_rate: Option<u32>) -> Result<Waveform> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{} channels; only mono is supported",
            spec.channels
        )));
    }
    if let Some(expected) = expected_rate {
        if spec.sample_rate != expected {
            return Err(Error::SampleRateMismatch {
                expected,
                found: spec.sample_rate,
            });
        }
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat(format!("{bits}-bit {fmt:?} samples")));
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Writes a mono WAV. 16-bit output saturates at full scale.
pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform, encoding: WavEncoding) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate(),
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => SampleFormat::Int,
            WavEncoding::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &v in wave.samples() {
        match encoding {
            WavEncoding::Pcm16 => {
                writer.write_sample((v * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?
            }
            WavEncoding::Float32 => writer.write_sample(v as f32)?,
        }
    }
    writer.finalize()?;
    Ok(())
}

pub fn write_mask(path: impl AsRef<Path>, mask: &ClipMask) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_mask(mask)?)?;
    w.flush()?;
    Ok(())
}

pub fn encode_mask(mask: &ClipMask) -> Result<Vec<u8>> {
    let len = u32::try_from(mask.len())
        .map_err(|_| Error::MalformedMask(format!("{} samples exceed the u32 header", mask.len())))?;
    let mut out = Vec::with_capacity(8 + mask.len());
    out.extend_from_slice(MASK_MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend(mask.labels().iter().map(|&l| l as u8));
    Ok(out)
}

/// Reads a mask sidecar; `theta` must be supplied since the file omits it.
pub fn read_mask(path: impl AsRef<Path>, theta: f64) -> Result<ClipMask> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_mask(&bytes, theta)
}

pub fn decode_mask(bytes: &[u8], theta: f64) -> Result<ClipMask> {
    if bytes.len() < 8 || &bytes[..4] != MASK_MAGIC {
        return Err(Error::MalformedMask("missing CMSK header".into()));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body = &bytes[8..];
    if body.len() != len {
        return Err(Error::MalformedMask(format!(
            "header announces {len} samples, body has {}",
            body.len()
        )));
    }
    let labels = body
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            ClipLabel::from_byte(b)
                .ok_or_else(|| Error::MalformedMask(format!("invalid label {b} at sample {i}")))
        })
        .collect::<Result<Vec<_>>>()?;
    ClipMask::new(labels, theta)
}
