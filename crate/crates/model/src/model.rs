use declip_autodiff::{Graph, ParamStore, Tensor, Var};
use declip_core::{stft, Waveform};

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::network::{init_parameters, parameter_shapes, Binder};
use crate::spectral::istft_var;

/// The declipping network: configuration plus named parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DeclipModel {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// A batch of equal-length waveforms with per-item input gains.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    /// Gain-scaled inputs `[B, N]`.
    pub waves: Tensor,
    /// Spectrograms of the scaled inputs `[B, 2, F, T]`.
    pub specs: Tensor,
    /// Gain applied to each input; outputs are divided by it.
    pub gains: Vec<f64>,
    /// 1 where an input sample is below its peak and is passed through,
    /// 0 where the network output is used. Only set with `keep_reliable`.
    pub reliable: Option<Tensor>,
    /// Unscaled inputs `[B, N]`, kept for the pass-through.
    pub inputs: Option<Tensor>,
}

impl DeclipModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_parameters(&config, seed)?;
        Ok(Self { config, params })
    }

    /// Rebuilds a model from stored parameters, checking every shape.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = parameter_shapes(&config);
        if expected.len() != params.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameters, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in expected {
            let t = params
                .get(&name)
                .map_err(|_| ModelError::Config(format!("missing parameter {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Config(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if !t.all_finite() {
                return Err(ModelError::Numerical(format!("parameter {name} is not finite")));
            }
        }
        Ok(Self { config, params })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.numel()
    }

    /// Scales and transforms a batch of equal-length inputs.
    pub fn prepare(&self, inputs: &[&[f64]]) -> Result<PreparedBatch> {
        let n = inputs
            .first()
            .map(|x| x.len())
            .ok_or_else(|| ModelError::InvalidArgument("empty batch".into()))?;
        if inputs.iter().any(|x| x.len() != n) {
            return Err(ModelError::InvalidArgument("batch items differ in length".into()));
        }
        let cfg = &self.config.stft;
        let (f, t) = (cfg.n_bins(), cfg.n_frames(n));
        if t == 0 || n <= cfg.pad() {
            return Err(ModelError::InvalidArgument(format!(
                "input of {n} samples is too short for a {}-point STFT",
                cfg.fft_size
            )));
        }
        let mut waves = Vec::with_capacity(inputs.len() * n);
        let mut specs = Vec::with_capacity(inputs.len() * 2 * f * t);
        let mut gains = Vec::with_capacity(inputs.len());
        let mut reliable = Vec::new();
        for x in inputs {
            let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if self.config.keep_reliable {
                // A clipped signal peaks at its threshold, so every sample
                // strictly below the peak is untouched by clipping.
                reliable.extend(x.iter().map(|v| if peak > 0.0 && v.abs() >= peak { 0.0 } else { 1.0 }));
            }
            let gain = if self.config.peak_normalize && peak > 0.0 { 1.0 / peak } else { 1.0 };
            let scaled: Vec<f64> = x.iter().map(|v| v * gain).collect();
            specs.extend_from_slice(stft(&scaled, cfg)?.data());
            waves.extend(scaled);
            gains.push(gain);
        }
        let b = inputs.len();
        let (reliable, inputs) = if self.config.keep_reliable {
            let raw = inputs.iter().flat_map(|x| x.iter().copied()).collect();
            (Some(Tensor::new(vec![b, n], reliable)?), Some(Tensor::new(vec![b, n], raw)?))
        } else {
            (None, None)
        };
        Ok(PreparedBatch {
            waves: Tensor::new(vec![b, n], waves)?,
            specs: Tensor::new(vec![b, 2, f, t], specs)?,
            gains,
            reliable,
            inputs,
        })
    }

    /// Full forward pass on the tape: waveforms `[B, N]` in, `[B, N]` out.
    pub fn forward<'g>(&self, graph: &'g Graph, batch: &PreparedBatch) -> Result<Var<'g>> {
        let bind = Binder {
            graph,
            store: &self.params,
            cfg: &self.config,
        };
        let n = batch.waves.shape()[1];
        let b = batch.gains.len();
        let spec = graph.input(batch.specs.clone());
        let tgram = if self.config.use_tgram {
            Some(bind.tgram(graph.input(batch.waves.clone()))?)
        } else {
            None
        };
        let out_spec = bind.spectral_core(spec, tgram)?;
        let mut wave = istft_var(out_spec, &self.config.stft, n)?;
        if batch.gains.iter().any(|&g| g != 1.0) {
            let inv: Vec<f64> = batch.gains.iter().flat_map(|g| std::iter::repeat_n(1.0 / g, n)).collect();
            wave = wave.mul(&graph.input(Tensor::new(vec![b, n], inv)?))?;
        }
        if let (Some(reliable), Some(inputs)) = (&batch.reliable, &batch.inputs) {
            let keep = reliable.data();
            let free: Vec<f64> = keep.iter().map(|r| 1.0 - r).collect();
            let kept: Vec<f64> = keep.iter().zip(inputs.data()).map(|(r, y)| r * y).collect();
            wave = wave
                .mul(&graph.input(Tensor::new(vec![b, n], free)?))?
                .add(&graph.input(Tensor::new(vec![b, n], kept)?))?;
        }
        Ok(wave)
    }

    /// Declips one waveform; the output has the input's length and rate.
    pub fn declip(&self, y: &Waveform) -> Result<Waveform> {
        let g = Graph::inference();
        let batch = self.prepare(&[y.samples()])?;
        let out = self.forward(&g, &batch)?;
        let samples = out.value().data().to_vec();
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Numerical("model produced non-finite samples".into()));
        }
        Ok(Waveform::new(samples, y.sample_rate())?)
    }
}
