//! Clipping-pair sampling and the training / validation loop.

use std::fmt::Write as _;

use declip_autodiff::Graph;
use declip_core::{clip, ClipMask, LossBreakdown, Waveform};
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::corpus::Corpus;
use crate::error::{ModelError, Result};
use crate::model::DeclipModel;
use crate::optim::{AdamW, AdamWConfig};
use crate::spectral::loss_var;

/// A clipped input with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipPair {
    pub clipped: Waveform,
    pub clean: Waveform,
    pub mask: ClipMask,
    pub theta: f64,
}

/// Draws `theta ~ U(lo, hi)` and clips `x` with it.
pub fn sample_clip_pair(x: &Waveform, rng: &mut impl rand::Rng, theta_range: (f64, f64)) -> Result<ClipPair> {
    let theta = rng.random_range(theta_range.0..theta_range.1);
    let (clipped, mask) = clip(x, theta)?;
    Ok(ClipPair {
        clipped,
        clean: x.clone(),
        mask,
        theta,
    })
}

/// Validation / training record for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean validation loss terms.
    pub val_terms: LossBreakdown,
}

impl EpochRecord {
    /// One `key=value` line, e.g.
    /// `epoch=3 train_loss=4.1 val_loss=3.9 l1=0.01 sc512=0.2 mag512=0.7 ...`.
    pub fn to_line(&self, fft_sizes: &[usize]) -> String {
        let mut s = format!(
            "epoch={} train_loss={:.6} val_loss={:.6} l1={:.6}",
            self.epoch, self.train_loss, self.val_loss, self.val_terms.l1
        );
        for (i, fft) in fft_sizes.iter().enumerate() {
            let sc = self.val_terms.sc.get(i).copied().unwrap_or(f64::NAN);
            let mag = self.val_terms.mag.get(i).copied().unwrap_or(f64::NAN);
            let _ = write!(s, " sc{fft}={sc:.6} mag{fft}={mag:.6}");
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the lowest validation loss.
    pub best_epoch: usize,
    /// Parameters at the best epoch.
    pub best: DeclipModel,
    pub stopped_early: bool,
    /// Set when training was aborted by a non-finite loss or gradient; the
    /// best model so far is still returned.
    pub diverged: Option<String>,
}

/// 1-based index of the first minimum, ignoring non-finite entries.
pub fn best_epoch(val_losses: &[f64]) -> Option<usize> {
    val_losses
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if b <= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i + 1)
}

/// Trailing moving average over `window` epochs (shorter at the start).
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

fn crop(x: &Waveform, start: usize, len: usize) -> Result<Waveform> {
    Ok(Waveform::new(x.samples()[start..start + len].to_vec(), x.sample_rate())?)
}

/// Fixed validation pairs: one crop and threshold per clip, drawn from a
/// stream separate from training.
pub fn validation_pairs(clips: &[Waveform], cfg: &TrainConfig) -> Result<Vec<ClipPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    clips
        .iter()
        .map(|x| {
            let len = cfg.crop_len.min(x.len());
            let start = rng.random_range(0..=x.len() - len);
            sample_clip_pair(&crop(x, start, len)?, &mut rng, cfg.theta_range)
        })
        .collect()
}

/// Mean loss and mean terms of the model over `pairs`.
pub fn evaluate_loss(model: &DeclipModel, pairs: &[ClipPair], cfg: &TrainConfig) -> Result<(f64, LossBreakdown)> {
    let mut mean = LossBreakdown {
        sc: vec![0.0; cfg.mrstft.resolutions.len()],
        mag: vec![0.0; cfg.mrstft.resolutions.len()],
        ..Default::default()
    };
    for pair in pairs {
        let g = Graph::inference();
        let batch = model.prepare(&[pair.clipped.samples()])?;
        let out = model.forward(&g, &batch)?;
        let (_, terms) = loss_var(out, pair.clean.samples(), &cfg.weights, &cfg.mrstft)?;
        mean.total += terms.total;
        mean.l1 += terms.l1;
        for i in 0..terms.sc.len() {
            mean.sc[i] += terms.sc[i];
            mean.mag[i] += terms.mag[i];
        }
    }
    let n = pairs.len().max(1) as f64;
    mean.total /= n;
    mean.l1 /= n;
    mean.sc.iter_mut().chain(mean.mag.iter_mut()).for_each(|v| *v /= n);
    Ok((mean.total, mean))
}

/// One optimisation step on a batch of pairs; returns the batch loss.
pub fn train_step(model: &mut DeclipModel, opt: &mut AdamW, pairs: &[ClipPair], cfg: &TrainConfig) -> Result<f64> {
    let g = Graph::new();
    let inputs: Vec<&[f64]> = pairs.iter().map(|p| p.clipped.samples()).collect();
    let batch = model.prepare(&inputs)?;
    let out = model.forward(&g, &batch)?;
    let mut total = None;
    for (i, pair) in pairs.iter().enumerate() {
        let (loss, _) = loss_var(out.slice(0, i, i + 1)?, pair.clean.samples(), &cfg.weights, &cfg.mrstft)?;
        total = Some(match total {
            None => loss,
            Some(acc) => loss.add(&acc)?,
        });
    }
    let total = total
        .ok_or_else(|| ModelError::InvalidArgument("empty batch".into()))?
        .scale(1.0 / pairs.len() as f64);
    let value = total.item()?;
    if !value.is_finite() {
        return Err(ModelError::Numerical(format!("training loss became {value}")));
    }
    g.backward(total)?;
    opt.step(&mut model.params, &g.param_grads())?;
    Ok(value)
}

/// Trains `model` on the train split, validating on the val split after
/// every epoch, and returns the best-validation parameters.
pub fn train(
    model: &mut DeclipModel,
    corpus: &Corpus,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.train.is_empty() || corpus.val.is_empty() {
        return Err(ModelError::InvalidArgument("training needs non-empty train and val splits".into()));
    }
    let mut opt = AdamW::new(AdamWConfig {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.adam_eps,
        weight_decay: cfg.weight_decay,
    });
    let val = validation_pairs(&corpus.val, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..corpus.train.len()).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, DeclipModel)> = None;
    let mut diverged = None;
    let mut stopped_early = false;

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let mut pairs = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let x = &corpus.train[i];
                let len = cfg.crop_len.min(x.len());
                let start = rng.random_range(0..=x.len() - len);
                pairs.push(sample_clip_pair(&crop(x, start, len)?, &mut rng, cfg.theta_range)?);
            }
            // Crops of different clips can differ in length only if a clip
            // is shorter than the crop; such batches are split per item.
            let uniform = pairs.iter().all(|p| p.clean.len() == pairs[0].clean.len());
            let groups: Vec<&[ClipPair]> = if uniform {
                vec![&pairs[..]]
            } else {
                pairs.chunks(1).collect()
            };
            for group in groups {
                match train_step(model, &mut opt, group, cfg) {
                    Ok(v) => {
                        sum += v;
                        steps += 1;
                    }
                    Err(ModelError::Numerical(msg)) => {
                        diverged = Some(format!("epoch {epoch}: {msg}"));
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        let (val_loss, val_terms) = match evaluate_loss(model, &val, cfg) {
            Ok(v) => v,
            Err(ModelError::Numerical(msg)) => {
                diverged = Some(format!("epoch {epoch}: validation failed: {msg}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let record = EpochRecord {
            epoch,
            train_loss: sum / steps.max(1) as f64,
            val_loss,
            val_terms,
        };
        on_epoch(&record);
        epochs.push(record);
        if !val_loss.is_finite() {
            diverged = Some(format!("epoch {epoch}: validation loss became {val_loss}"));
            break;
        }
        match &best {
            Some((_, b, _)) if *b <= val_loss => {}
            _ => best = Some((epoch, val_loss, model.clone())),
        }
        let best_at = best.as_ref().map_or(epoch, |b| b.0);
        if epoch - best_at >= cfg.patience && epoch < cfg.epochs {
            stopped_early = true;
            break;
        }
    }

    let (best_epoch, best) = match best {
        Some((e, _, m)) => (e, m),
        None => (0, model.clone()),
    };
    Ok(TrainOutcome {
        epochs,
        best_epoch,
        best,
        stopped_early,
        diverged,
    })
}
