//! Seeded speech-like test material and corpus directories.
//!
//! Each clip is a run of syllables separated by short pauses. Voiced
//! syllables are harmonic stacks on a gliding, vibrato-modulated pitch,
//! shaped by three formant resonances; unvoiced ones are band-limited noise
//! bursts. A faint noise floor runs underneath, and the clip is scaled to
//! unit peak.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::{Path, PathBuf};

use declip_core::io::{read_wav, write_wav, WavEncoding};
use declip_core::Waveform;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seconds_per_clip: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for CorpusSpec {
    /// 200 one-second clips split 160 / 20 / 20.
    fn default() -> Self {
        Self {
            n_train: 160,
            n_val: 20,
            n_test: 20,
            seconds_per_clip: 1.0,
            sample_rate: declip_core::SAMPLE_RATE,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(ModelError::Config("every split needs at least one clip".into()));
        }
        if !(self.seconds_per_clip > 0.0 && self.seconds_per_clip.is_finite()) || self.sample_rate == 0 {
            return Err(ModelError::Config("clip duration and sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn clip_len(&self) -> usize {
        (self.seconds_per_clip * self.sample_rate as f64).round() as usize
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Val => self.n_val,
            Split::Test => self.n_test,
        }
    }
}

/// Noise floor relative to full scale, before peak normalisation.
const NOISE_FLOOR_DB: f64 = -60.0;

/// Resonance gain of a formant at `freq`.
fn formant_gain(freq: f64, center: f64, bandwidth: f64) -> f64 {
    let d = (freq - center) / (0.5 * bandwidth);
    1.0 / (1.0 + d * d)
}

fn raised_cosine_envelope(i: usize, len: usize, ramp: usize) -> f64 {
    let ramp = ramp.min(len / 2).max(1);
    if i < ramp {
        0.5 - 0.5 * (PI * i as f64 / ramp as f64).cos()
    } else if i >= len - ramp {
        0.5 - 0.5 * (PI * (len - i) as f64 / ramp as f64).cos()
    } else {
        1.0
    }
}

fn voiced(out: &mut [f64], rng: &mut ChaCha8Rng, sr: f64, base_f0: f64, gain: f64) {
    let len = out.len();
    let f0_start = base_f0 * rng.random_range(0.85..1.15);
    let f0_end = f0_start * rng.random_range(0.8..1.2);
    let vib_rate = rng.random_range(4.0..6.5);
    let vib_depth = rng.random_range(0.005..0.02);
    let formants = [
        (rng.random_range(300.0..900.0), rng.random_range(60.0..120.0), 1.0),
        (rng.random_range(900.0..2400.0), rng.random_range(80.0..160.0), rng.random_range(0.3..0.8)),
        (rng.random_range(2300.0..3400.0), rng.random_range(120.0..250.0), rng.random_range(0.1..0.4)),
    ];
    let max_harm = ((4000.0 / f0_start.min(f0_end)) as usize).max(1);
    let phases: Vec<f64> = (0..max_harm).map(|_| rng.random_range(0.0..TAU)).collect();
    let ramp = (0.02 * sr) as usize;
    let mut phase = 0.0;
    for (i, o) in out.iter_mut().enumerate() {
        let pos = i as f64 / len as f64;
        let t = i as f64 / sr;
        let f0 = (f0_start + (f0_end - f0_start) * pos) * (1.0 + vib_depth * (TAU * vib_rate * t).sin());
        phase += TAU * f0 / sr;
        let mut s = 0.0;
        for (k, ph) in phases.iter().enumerate() {
            let freq = f0 * (k + 1) as f64;
            if freq > 4000.0 {
                break;
            }
            let env: f64 = formants.iter().map(|&(c, bw, a)| a * formant_gain(freq, c, bw)).sum::<f64>()
                + 0.02;
            s += env / (k + 1) as f64 * (phase * (k + 1) as f64 + ph).sin();
        }
        *o += gain * raised_cosine_envelope(i, len, ramp) * s;
    }
}

fn unvoiced(out: &mut [f64], rng: &mut ChaCha8Rng, sr: f64, gain: f64) {
    // Two-pole resonator driven by white noise.
    let center = rng.random_range(2000.0..6000.0);
    let r: f64 = rng.random_range(0.85..0.95);
    let (a1, a2) = (2.0 * r * (TAU * center / sr).cos(), -r * r);
    let (mut y1, mut y2) = (0.0, 0.0);
    let ramp = (0.01 * sr) as usize;
    let len = out.len();
    let scale = (1.0 - r) * 0.5;
    for (i, o) in out.iter_mut().enumerate() {
        let e: f64 = StandardNormal.sample(rng);
        let y = e * scale + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        *o += gain * raised_cosine_envelope(i, len, ramp) * y;
    }
}

/// One clip, fully determined by `(seed, split, index)`.
pub fn synth_clip(spec: &CorpusSpec, split: Split, index: usize) -> Result<Waveform> {
    let n = spec.clip_len();
    let sr = spec.sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(split.stream() << 32 | index as u64);
    let mut x = vec![0.0; n];
    let base_f0 = rng.random_range(90.0..250.0);
    let mut pos = (rng.random_range(0.0..0.08) * sr) as usize;
    while pos < n {
        let len = (rng.random_range(0.08..0.25) * sr) as usize;
        let end = (pos + len).min(n);
        let gain = rng.random_range(0.25..1.0);
        if rng.random_bool(0.75) {
            voiced(&mut x[pos..end], &mut rng, sr, base_f0, gain);
        } else {
            unvoiced(&mut x[pos..end], &mut rng, sr, gain);
        }
        pos = end + (rng.random_range(0.02..0.08) * sr) as usize;
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 10f64.powf(NOISE_FLOOR_DB / 20.0) * peak.max(1e-3);
    for v in x.iter_mut() {
        let e: f64 = StandardNormal.sample(&mut rng);
        *v += floor * e;
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for v in x.iter_mut() {
        *v /= peak;
    }
    Ok(Waveform::new(x, spec.sample_rate)?)
}

/// Clean clips of the three splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Vec<Waveform>,
    pub val: Vec<Waveform>,
    pub test: Vec<Waveform>,
}

impl Corpus {
    pub fn synthesize(spec: &CorpusSpec) -> Result<Self> {
        spec.validate()?;
        let make = |split: Split| -> Result<Vec<Waveform>> {
            (0..spec.count(split)).map(|i| synth_clip(spec, split, i)).collect()
        };
        Ok(Self {
            train: make(Split::Train)?,
            val: make(Split::Val)?,
            test: make(Split::Test)?,
        })
    }

    pub fn split(&self, split: Split) -> &[Waveform] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Writes `dir/{train,val,test}/NNNN.wav` as 32-bit float WAV.
    pub fn materialize(&self, dir: impl AsRef<Path>) -> Result<()> {
        for split in Split::ALL {
            let sub = dir.as_ref().join(split.dir_name());
            fs::create_dir_all(&sub)?;
            for (i, w) in self.split(split).iter().enumerate() {
                write_wav(sub.join(format!("{i:04}.wav")), w, WavEncoding::Float32)?;
            }
        }
        Ok(())
    }

    /// Reads a corpus directory laid out as written by [`Corpus::materialize`];
    /// any mono WAV files at the expected rate are accepted, in name order.
    pub fn load(dir: impl AsRef<Path>, sample_rate: u32) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Self {
            train: Self::load_split(dir, Split::Train, sample_rate)?,
            val: Self::load_split(dir, Split::Val, sample_rate)?,
            test: Self::load_split(dir, Split::Test, sample_rate)?,
        })
    }

    /// Reads one split of a corpus directory.
    pub fn load_split(dir: impl AsRef<Path>, split: Split, sample_rate: u32) -> Result<Vec<Waveform>> {
        let sub = dir.as_ref().join(split.dir_name());
        let mut files: Vec<PathBuf> = fs::read_dir(&sub)
            .map_err(|e| ModelError::Data(format!("{}: {e}", sub.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext.eq_ignore_ascii_case("wav")))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(ModelError::Data(format!("{} holds no WAV files", sub.display())));
        }
        files.iter().map(|p| Ok(read_wav(p, Some(sample_rate))?)).collect()
    }
}
