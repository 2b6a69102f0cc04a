//! Metric table over a test split: every method at every clipping level.

use std::fmt;
use std::io::Write;

use declip_core::aspade::{declip_aspade, SpadeParams};
use declip_core::{clip, find_threshold, sdr, sdr_c, total_loss, ClipMask, LossWeights, MrStftConfig, Waveform};
use declip_model::DeclipModel;
use rayon::prelude::*;

use crate::error::{HarnessError, Result};

/// Bumped whenever a column is added, removed or reinterpreted.
pub const SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: [&str; 10] = [
    "schema_version",
    "method",
    "sdr_level",
    "n_files",
    "sdr",
    "sdr_c",
    "l1",
    "sc",
    "mag",
    "total_loss",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    /// The clipped input itself.
    Clipped,
    Aspade,
    Model,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Clipped => "clipped",
            Method::Aspade => "aspade",
            Method::Model => "model",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSpec {
    /// Target input SDRs in dB; `+inf` means unclipped.
    pub levels: Vec<f64>,
    pub methods: Vec<Method>,
    pub spade: SpadeParams,
    pub weights: LossWeights,
    pub mrstft: MrStftConfig,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            levels: vec![1.0, 3.0, 7.0, 15.0, f64::INFINITY],
            methods: vec![Method::Clipped, Method::Aspade, Method::Model],
            spade: SpadeParams::default(),
            weights: LossWeights::default(),
            mrstft: MrStftConfig::default(),
        }
    }
}

impl EvalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.methods.is_empty() {
            return Err(HarnessError::Usage("at least one level and one method are required".into()));
        }
        if let Some(l) = self.levels.iter().find(|l| l.is_nan() || **l <= 0.0) {
            return Err(HarnessError::Usage(format!("SDR level {l} must be positive or inf")));
        }
        Ok(())
    }
}

/// Means over the files of one (method, level) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub method: Method,
    pub level: f64,
    pub n_files: usize,
    pub sdr: f64,
    /// Absent when nothing was clipped.
    pub sdr_c: Option<f64>,
    pub l1: f64,
    pub sc: f64,
    pub mag: f64,
    pub total_loss: f64,
}

struct FileScore {
    sdr: f64,
    sdr_c: Option<f64>,
    l1: f64,
    sc: f64,
    mag: f64,
    total: f64,
}

fn degrade(x: &Waveform, level: f64) -> Result<(Waveform, ClipMask)> {
    if level.is_infinite() {
        return Ok((x.clone(), ClipMask::all_reliable(x.len(), x.peak())?));
    }
    let theta = find_threshold(x, level)?;
    Ok(clip(x, theta)?)
}

fn restore(method: Method, y: &Waveform, mask: &ClipMask, spec: &EvalSpec, model: Option<&DeclipModel>) -> Result<Waveform> {
    match method {
        Method::Clipped => Ok(y.clone()),
        Method::Aspade => Ok(declip_aspade(y, mask, &spec.spade)?.0),
        Method::Model => {
            let model = model.ok_or_else(|| HarnessError::Usage("the model method needs a checkpoint".into()))?;
            Ok(model.declip(y)?)
        }
    }
}

fn score(x: &Waveform, est: &Waveform, mask: &ClipMask, spec: &EvalSpec) -> Result<FileScore> {
    let losses = total_loss(x.samples(), est.samples(), &spec.weights, &spec.mrstft)?;
    Ok(FileScore {
        sdr: sdr(x, est)?,
        sdr_c: if mask.clipped_count() > 0 { Some(sdr_c(x, est, mask)?) } else { None },
        l1: losses.l1,
        sc: losses.sc_sum(),
        mag: losses.mag_sum(),
        total: losses.total,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Scores every method at every level on `clips`. Files are processed in
/// parallel; rows come out in method-major order independent of scheduling.
pub fn evaluate(spec: &EvalSpec, clips: &[Waveform], model: Option<&DeclipModel>) -> Result<Vec<EvalRow>> {
    spec.validate()?;
    if clips.is_empty() {
        return Err(HarnessError::Data("no clips to evaluate".into()));
    }
    if spec.methods.contains(&Method::Model) != model.is_some() {
        return Err(HarnessError::Usage(
            "a checkpoint is required exactly when the model method is selected".into(),
        ));
    }
    let mut rows = Vec::new();
    for &method in &spec.methods {
        for &level in &spec.levels {
            let scores = clips
                .par_iter()
                .map(|x| {
                    let (y, mask) = degrade(x, level)?;
                    let est = restore(method, &y, &mask, spec, model)?;
                    score(x, &est, &mask, spec)
                })
                .collect::<Result<Vec<_>>>()?;
            let sdr_c = if scores.iter().all(|s| s.sdr_c.is_some()) {
                Some(mean(scores.iter().filter_map(|s| s.sdr_c)))
            } else {
                None
            };
            rows.push(EvalRow {
                method,
                level,
                n_files: scores.len(),
                sdr: mean(scores.iter().map(|s| s.sdr)),
                sdr_c,
                l1: mean(scores.iter().map(|s| s.l1)),
                sc: mean(scores.iter().map(|s| s.sc)),
                mag: mean(scores.iter().map(|s| s.mag)),
                total_loss: mean(scores.iter().map(|s| s.total)),
            });
        }
    }
    Ok(rows)
}

fn level_label(level: f64) -> String {
    if level.is_infinite() {
        "inf".into()
    } else {
        format!("{level}")
    }
}

fn num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.6}")
    }
}

pub fn write_csv<W: Write>(out: W, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            SCHEMA_VERSION.to_string(),
            r.method.name().to_string(),
            level_label(r.level),
            r.n_files.to_string(),
            num(r.sdr),
            r.sdr_c.map(num).unwrap_or_default(),
            num(r.l1),
            num(r.sc),
            num(r.mag),
            num(r.total_loss),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Methods down, levels across; one block for SDR and one for SDR_c.
pub fn write_pretty<W: Write>(mut out: W, rows: &[EvalRow]) -> Result<()> {
    let mut levels: Vec<f64> = Vec::new();
    let mut methods: Vec<Method> = Vec::new();
    for r in rows {
        if !levels.contains(&r.level) {
            levels.push(r.level);
        }
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    let cell = |m: Method, l: f64, pick: &dyn Fn(&EvalRow) -> Option<f64>| -> String {
        rows.iter()
            .find(|r| r.method == m && r.level == l)
            .and_then(pick)
            .map(|v| if v.is_infinite() { "inf".into() } else { format!("{v:.2}") })
            .unwrap_or_else(|| "-".into())
    };
    let blocks: [(&str, &dyn Fn(&EvalRow) -> Option<f64>); 2] = [("SDR", &|r| Some(r.sdr)), ("SDR_c", &|r| r.sdr_c)];
    for (title, pick) in blocks {
        write!(out, "{title:<10}")?;
        for &l in &levels {
            let head = if l.is_infinite() { "INF".to_string() } else { format!("{l} dB") };
            write!(out, "{head:>10}")?;
        }
        writeln!(out)?;
        for &m in &methods {
            write!(out, "{:<10}", m.name())?;
            for &l in &levels {
                write!(out, "{:>10}", cell(m, l, pick))?;
            }
            writeln!(out)?;
        }
        writeln!(out)?;
    }
    Ok(())
}
