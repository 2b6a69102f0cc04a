//! Parameter layout and the differentiable forward pass.

use declip_autodiff::{attention_weights, Conv1dSpec, Conv2dSpec, Graph, ParamStore, Tensor, Var};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};

/// Shape of every parameter, in a fixed order.
pub fn parameter_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let f = cfg.tgram.f_bins;
    let c = cfg.channels;
    let hidden = cfg.ffn_mult * c;
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>| out.push((name, shape));

    push("tgram.conv0.weight".into(), vec![f, 1, cfg.tgram.win_length]);
    push("tgram.conv0.bias".into(), vec![f]);
    for i in 0..cfg.tgram.n_refine_layers {
        push(format!("tgram.refine{i}.weight"), vec![f, f, 3]);
        push(format!("tgram.refine{i}.bias"), vec![f]);
    }

    push("enc.up.weight".into(), vec![c, 3, 3, 3]);
    push("enc.up.bias".into(), vec![c]);
    let sdb = |prefix: &str, push: &mut dyn FnMut(String, Vec<usize>)| {
        let gw = c / cfg.sdb_groups;
        for g in 0..cfg.sdb_groups {
            push(format!("{prefix}.conv{g}.weight"), vec![gw, gw * (g + 1), 3, 3]);
            push(format!("{prefix}.conv{g}.bias"), vec![gw]);
            push(format!("{prefix}.act{g}.alpha"), vec![1]);
        }
    };
    sdb("enc.sdb", &mut push);

    for b in 0..cfg.n_blocks {
        for axis in ["f", "t"] {
            let p = format!("blocks.{b}.{axis}");
            push(format!("{p}.norm1.gamma"), vec![c]);
            push(format!("{p}.norm1.beta"), vec![c]);
            push(format!("{p}.qkv.weight"), vec![c, 3 * c]);
            push(format!("{p}.qkv.bias"), vec![3 * c]);
            push(format!("{p}.proj.weight"), vec![c, c]);
            push(format!("{p}.proj.bias"), vec![c]);
            push(format!("{p}.norm2.gamma"), vec![c]);
            push(format!("{p}.norm2.beta"), vec![c]);
            push(format!("{p}.ff1.weight"), vec![c, hidden]);
            push(format!("{p}.ff1.bias"), vec![hidden]);
            push(format!("{p}.act.alpha"), vec![1]);
            push(format!("{p}.ff2.weight"), vec![hidden, c]);
            push(format!("{p}.ff2.bias"), vec![c]);
        }
    }

    sdb("dec.sdb", &mut push);
    push("dec.down.weight".into(), vec![c, 2, 3, 3]);
    push("dec.down.bias".into(), vec![2]);
    out
}

/// Initial slope of every PReLU.
pub const PRELU_INIT: f64 = 0.25;

/// Fan-in of a weight tensor: every dimension except the output one.
fn fan_in(name: &str, shape: &[usize]) -> usize {
    if name.ends_with("down.weight") {
        // Transposed convolution, [Cin, Cout, KH, KW]: each output sees Cin*KH*KW inputs.
        shape[0] * shape[2] * shape[3]
    } else if shape.len() == 2 {
        // Linear layers are stored [in, out].
        shape[0]
    } else {
        shape[1..].iter().product()
    }
}

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases and norm shifts 0;
/// norm scales 1; PReLU slopes [`PRELU_INIT`].
pub fn init_parameters(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape) in parameter_shapes(cfg) {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = if name.ends_with(".weight") {
            let bound = 1.0 / (fan_in(&name, &shape) as f64).sqrt();
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        } else if name.ends_with(".gamma") {
            vec![1.0; n]
        } else if name.ends_with(".alpha") {
            vec![PRELU_INIT; n]
        } else {
            vec![0.0; n]
        };
        store.insert(name, Tensor::new(shape, data)?)?;
    }
    Ok(store)
}

/// Binds parameters of a store into a graph by name.
pub struct Binder<'g, 's> {
    pub graph: &'g Graph,
    pub store: &'s ParamStore,
    pub cfg: &'s ModelConfig,
}

impl<'g> Binder<'g, '_> {
    fn p(&self, name: &str) -> Result<Var<'g>> {
        Ok(self.graph.param(self.store, name)?)
    }

    /// Waveforms `[B, N]` to temporal features `[B, F, T]`.
    pub fn tgram(&self, wave: Var<'g>) -> Result<Var<'g>> {
        let shape = wave.shape();
        if shape.len() != 2 {
            return Err(ModelError::InvalidArgument(format!("front-end expects [B, N], got {shape:?}")));
        }
        let (b, n) = (shape[0], shape[1]);
        let stft = &self.cfg.stft;
        let tg = &self.cfg.tgram;
        let frames = stft.n_frames(n);
        let mut x = wave.reshape(&[b, 1, n])?;
        if stft.center {
            x = x.pad_reflect(stft.pad())?;
        }
        // Align the kernel with the window, which sits centred in the FFT frame.
        let offset = (stft.fft_size - stft.win_length) / 2;
        let len = (frames - 1) * stft.hop + stft.win_length;
        let padded_len = x.shape()[2];
        if offset > 0 || len < padded_len {
            x = x.slice(2, offset, offset + len)?;
        }
        let mut h = x.conv1d(
            &self.p("tgram.conv0.weight")?,
            Some(&self.p("tgram.conv0.bias")?),
            Conv1dSpec {
                stride: tg.hop,
                ..Conv1dSpec::default()
            },
        )?;
        for i in 0..tg.n_refine_layers {
            h = h.leaky_relu(tg.leaky_slope).conv1d(
                &self.p(&format!("tgram.refine{i}.weight"))?,
                Some(&self.p(&format!("tgram.refine{i}.bias"))?),
                Conv1dSpec {
                    padding: 1,
                    ..Conv1dSpec::default()
                },
            )?;
        }
        debug_assert_eq!(h.shape(), vec![b, tg.f_bins, frames]);
        Ok(h)
    }

    /// Split-dense block on `[B, C, F, T]`, residual included.
    pub fn sdb(&self, prefix: &str, h: Var<'g>) -> Result<Var<'g>> {
        let c = self.cfg.channels;
        let groups = self.cfg.sdb_groups;
        let gw = c / groups;
        let mut outs: Vec<Var<'g>> = Vec::with_capacity(groups);
        for g in 0..groups {
            let mut parts = vec![h.slice(1, g * gw, (g + 1) * gw)?];
            parts.extend(outs.iter().copied());
            let input = if parts.len() == 1 { parts[0] } else { Var::concat(&parts, 1)? };
            let y = input
                .conv2d(
                    &self.p(&format!("{prefix}.conv{g}.weight"))?,
                    Some(&self.p(&format!("{prefix}.conv{g}.bias"))?),
                    Conv2dSpec::same(1),
                )?
                .prelu(&self.p(&format!("{prefix}.act{g}.alpha"))?)?;
            outs.push(y);
        }
        let merged = if outs.len() == 1 { outs[0] } else { Var::concat(&outs, 1)? };
        Ok(merged.add(&h)?)
    }

    /// `[B, 3, F, T] -> [B, C, F, T]`.
    pub fn encoder(&self, x: Var<'g>) -> Result<Var<'g>> {
        let h = x.conv2d(
            &self.p("enc.up.weight")?,
            Some(&self.p("enc.up.bias")?),
            Conv2dSpec::same(1),
        )?;
        self.sdb("enc.sdb", h)
    }

    /// `[B, C, F, T] -> [B, 2, F, T]`.
    pub fn decoder(&self, h: Var<'g>) -> Result<Var<'g>> {
        let h = self.sdb("dec.sdb", h)?;
        Ok(h.conv_transpose2d(
            &self.p("dec.down.weight")?,
            Some(&self.p("dec.down.bias")?),
            (1, 1),
            (1, 1),
        )?)
    }

    /// Pre-norm self-attention plus feed-forward over tokens `[M, L, C]`.
    pub fn transformer(&self, prefix: &str, x: Var<'g>) -> Result<Var<'g>> {
        let p = |s: &str| self.p(&format!("{prefix}.{s}"));
        let n1 = x.layer_stats_norm(&[2])?.scale_shift(&p("norm1.gamma")?, &p("norm1.beta")?)?;
        let qkv = n1.linear(&p("qkv.weight")?, Some(&p("qkv.bias")?))?;
        let att = qkv
            .self_attention(self.cfg.n_heads)?
            .linear(&p("proj.weight")?, Some(&p("proj.bias")?))?;
        let x = x.add(&att)?;
        let n2 = x.layer_stats_norm(&[2])?.scale_shift(&p("norm2.gamma")?, &p("norm2.beta")?)?;
        let ff = n2
            .linear(&p("ff1.weight")?, Some(&p("ff1.bias")?))?
            .prelu(&p("act.alpha")?)?
            .linear(&p("ff2.weight")?, Some(&p("ff2.bias")?))?;
        Ok(x.add(&ff)?)
    }

    /// Attention across frequency bins within each frame of `[B, C, F, T]`.
    pub fn f_transformer(&self, block: usize, h: Var<'g>) -> Result<Var<'g>> {
        let s = h.shape();
        let (b, c, f, t) = (s[0], s[1], s[2], s[3]);
        let tokens = h.permute(&[0, 3, 2, 1])?.reshape(&[b * t, f, c])?;
        let y = self.transformer(&format!("blocks.{block}.f"), tokens)?;
        Ok(y.reshape(&[b, t, f, c])?.permute(&[0, 3, 2, 1])?)
    }

    /// Attention across frames within each frequency bin of `[B, C, F, T]`.
    pub fn t_transformer(&self, block: usize, h: Var<'g>) -> Result<Var<'g>> {
        let s = h.shape();
        let (b, c, f, t) = (s[0], s[1], s[2], s[3]);
        let tokens = h.permute(&[0, 2, 3, 1])?.reshape(&[b * f, t, c])?;
        let y = self.transformer(&format!("blocks.{block}.t"), tokens)?;
        Ok(y.reshape(&[b, f, t, c])?.permute(&[0, 3, 1, 2])?)
    }

    pub fn block(&self, index: usize, h: Var<'g>) -> Result<Var<'g>> {
        let y = self.t_transformer(index, self.f_transformer(index, h)?)?;
        if !y.with_value(|v| v.all_finite()) {
            return Err(ModelError::Numerical(format!("non-finite activations after block {index}")));
        }
        Ok(y)
    }

    /// Stacks the spectrogram `[B, 2, F, T]` and front-end features
    /// `[B, F, T]` into `[B, 3, F, T]`; absent features become zeros.
    pub fn assemble_input(&self, spec: Var<'g>, tgram: Option<Var<'g>>) -> Result<Var<'g>> {
        let s = spec.shape();
        if s.len() != 4 || s[1] != 2 {
            return Err(ModelError::InvalidArgument(format!("expected [B, 2, F, T] spectrogram, got {s:?}")));
        }
        let (b, f, t) = (s[0], s[2], s[3]);
        let yt = match tgram {
            Some(v) if v.shape() == [b, f, t] => v.reshape(&[b, 1, f, t])?,
            Some(v) => {
                return Err(ModelError::InvalidArgument(format!(
                    "front-end features {:?} do not match spectrogram {s:?}",
                    v.shape()
                )))
            }
            None => self.graph.input(Tensor::zeros(vec![b, 1, f, t])),
        };
        Ok(Var::concat(&[spec, yt], 1)?)
    }

    /// Spectrogram `[B, 2, F, T]` plus front-end features to the decoded
    /// spectrogram `[B, 2, F, T]`.
    pub fn spectral_core(&self, spec: Var<'g>, tgram: Option<Var<'g>>) -> Result<Var<'g>> {
        let x = self.assemble_input(spec, tgram)?;
        let mut h = self.encoder(x)?;
        for i in 0..self.cfg.n_blocks {
            h = self.block(i, h)?;
        }
        let out = self.decoder(h)?;
        if self.cfg.residual {
            Ok(out.add(&spec)?)
        } else {
            Ok(out)
        }
    }
}

/// Attention probabilities of the F- (`axis = 'f'`) or T-transformer of a
/// block for input `[B, C, F, T]`, as `[M, heads, L, L]`.
pub fn attention_probe(store: &ParamStore, cfg: &ModelConfig, h: &Tensor, block: usize, axis: char) -> Result<Tensor> {
    let g = Graph::inference();
    let bind = Binder {
        graph: &g,
        store,
        cfg,
    };
    let s = h.shape();
    let (b, c, f, t) = (s[0], s[1], s[2], s[3]);
    let x = g.input(h.clone());
    let tokens = match axis {
        'f' => x.permute(&[0, 3, 2, 1])?.reshape(&[b * t, f, c])?,
        't' => x.permute(&[0, 2, 3, 1])?.reshape(&[b * f, t, c])?,
        other => return Err(ModelError::InvalidArgument(format!("unknown attention axis {other:?}"))),
    };
    let prefix = format!("blocks.{block}.{axis}");
    let p = |s: &str| bind.p(&format!("{prefix}.{s}"));
    let qkv = tokens
        .layer_stats_norm(&[2])?
        .scale_shift(&p("norm1.gamma")?, &p("norm1.beta")?)?
        .linear(&p("qkv.weight")?, Some(&p("qkv.bias")?))?;
    let w = attention_weights(&qkv.value(), cfg.n_heads)?;
    Ok(w)
}
