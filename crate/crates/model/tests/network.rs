use declip_autodiff::{Graph, ParamStore, Tensor};
use declip_core::{stft, StftConfig};
use declip_model::network::{attention_probe, parameter_shapes, Binder};
use declip_model::{DeclipModel, ModelConfig};
use proptest::prelude::*;

fn signal(n: usize, seed: u64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = i as f64 + seed as f64 * 17.0;
            0.6 * (0.031 * t).sin() + 0.3 * (0.173 * t + 1.0).sin() + 0.05 * (2.9 * t).cos()
        })
        .collect()
}

fn tensor(shape: Vec<usize>, seed: u64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|i| ((i as f64 + 0.5) * 0.7919 + seed as f64).sin()).collect();
    Tensor::new(shape, data).unwrap()
}

fn zero_biases(model: &mut DeclipModel) {
    for (name, t) in model.params.iter_mut() {
        if name.ends_with(".bias") {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Independent closed form of the parameter count.
fn expected_count(cfg: &ModelConfig) -> usize {
    let f = cfg.stft.fft_size / 2 + 1;
    let c = cfg.channels;
    let hidden = cfg.ffn_mult * c;
    let tgram = f * cfg.stft.win_length + f + cfg.tgram.n_refine_layers * (3 * f * f + f);
    let up = 27 * c + c;
    let gw = c / cfg.sdb_groups;
    let g = cfg.sdb_groups;
    // sum over groups of 9 * gw * gw * (k + 1) weights, gw biases, one slope
    let sdb = 9 * gw * gw * g * (g + 1) / 2 + g * gw + g;
    let transformer = 4 * c + (3 * c * c + 3 * c) + (c * c + c) + (c * hidden + hidden) + 1 + (hidden * c + c);
    let down = 18 * c + 2;
    tgram + up + 2 * sdb + 2 * cfg.n_blocks * transformer + down
}

#[test]
fn parameter_count_matches_formula_and_golden_value() {
    let toy = ModelConfig::toy();
    let model = DeclipModel::new(toy, 0).unwrap();
    assert_eq!(model.parameter_count(), expected_count(&toy));
    assert_eq!(model.parameter_count(), 59_163);

    let full = ModelConfig::full_scale();
    let shapes: usize = parameter_shapes(&full)
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum();
    assert_eq!(shapes, expected_count(&full));
    assert_eq!(shapes, 1_043_999);
}

#[test]
fn parameter_names_are_unique_and_init_is_seeded() {
    let cfg = ModelConfig::toy();
    let shapes = parameter_shapes(&cfg);
    let mut names: Vec<&str> = shapes.iter().map(|(n, _)| n.as_str()).collect();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), shapes.len());
    let a = DeclipModel::new(cfg, 7).unwrap();
    let b = DeclipModel::new(cfg, 7).unwrap();
    let c = DeclipModel::new(cfg, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let gamma = a.params.get("blocks.0.f.norm1.gamma").unwrap();
    assert!(gamma.data().iter().all(|&v| v == 1.0));
    let bias = a.params.get("enc.up.bias").unwrap();
    assert!(bias.data().iter().all(|&v| v == 0.0));
    // U(-1/sqrt(fan_in), 1/sqrt(fan_in)) with fan_in = 3 * 3 * 3.
    let w = a.params.get("enc.up.weight").unwrap();
    assert!(w.data().iter().all(|v| v.abs() <= 1.0 / 27f64.sqrt()));
}

#[test]
fn stage_shapes_hold_for_three_lengths() {
    let cfg = ModelConfig::toy();
    let model = DeclipModel::new(cfg, 1).unwrap();
    let (f, c) = (cfg.n_bins(), cfg.channels);
    for n in [1000, 1601, 2047] {
        let x = signal(n, 3);
        let g = Graph::inference();
        let bind = Binder {
            graph: &g,
            store: &model.params,
            cfg: &model.config,
        };
        let t = cfg.stft.n_frames(n);
        let batch = model.prepare(&[&x, &x]).unwrap();
        assert_eq!(batch.specs.shape(), &[2, 2, f, t]);
        let tg = bind.tgram(g.input(batch.waves.clone())).unwrap();
        assert_eq!(tg.shape(), vec![2, f, t]);
        let spec = g.input(batch.specs.clone());
        let x3 = bind.assemble_input(spec, Some(tg)).unwrap();
        assert_eq!(x3.shape(), vec![2, 3, f, t]);
        let h = bind.encoder(x3).unwrap();
        assert_eq!(h.shape(), vec![2, c, f, t]);
        let h = bind.block(0, h).unwrap();
        assert_eq!(h.shape(), vec![2, c, f, t]);
        let out = bind.decoder(h).unwrap();
        assert_eq!(out.shape(), vec![2, 2, f, t]);
        let y = model.forward(&g, &batch).unwrap();
        assert_eq!(y.shape(), vec![2, n]);
        assert!(y.value().all_finite());
    }
}

#[test]
fn untrained_model_keeps_length_and_stays_finite() {
    let model = DeclipModel::new(ModelConfig::toy(), 2).unwrap();
    let y = declip_core::Waveform::new(signal(1234, 1), 16_000).unwrap();
    let out = model.declip(&y).unwrap();
    assert_eq!(out.len(), y.len());
    assert_eq!(out.sample_rate(), 16_000);
    assert!(out.samples().iter().all(|v| v.is_finite()));
}

#[test]
fn reliable_samples_pass_through_unchanged() {
    let model = DeclipModel::new(ModelConfig::toy(), 5).unwrap();
    let x = declip_core::Waveform::new(signal(1500, 3), 16_000).unwrap();
    let (y, mask) = declip_core::clip(&x, 0.4).unwrap();
    let out = model.declip(&y).unwrap();
    for (i, label) in mask.labels().iter().enumerate() {
        if !label.is_clipped() {
            assert_eq!(out.samples()[i], y.samples()[i], "sample {i}");
        }
    }
    assert!(mask.clipped_indices().any(|i| out.samples()[i] != y.samples()[i]));

    // Unclipped input: only the samples at the peak are left to the network.
    let out = model.declip(&x).unwrap();
    let changed: Vec<usize> = (0..x.len()).filter(|&i| out.samples()[i] != x.samples()[i]).collect();
    assert!(changed.iter().all(|&i| x.samples()[i].abs() == x.peak()), "{changed:?}");

    let mut raw = model.clone();
    raw.config.keep_reliable = false;
    let out = raw.declip(&y).unwrap();
    assert!(mask.labels().iter().zip(out.samples()).zip(y.samples()).any(|((l, o), v)| !l.is_clipped() && o != v));
}

#[test]
fn zero_input_with_zero_biases_gives_zero_output() {
    let cfg = ModelConfig::toy();
    let mut model = DeclipModel::new(cfg, 3).unwrap();
    zero_biases(&mut model);
    let g = Graph::inference();
    let bind = Binder {
        graph: &g,
        store: &model.params,
        cfg: &model.config,
    };
    let (f, c, t) = (cfg.n_bins(), cfg.channels, 41);
    let tg = bind.tgram(g.input(Tensor::zeros(vec![1, 1280]))).unwrap();
    assert!(tg.value().data().iter().all(|&v| v == 0.0));
    let h = bind.encoder(g.input(Tensor::zeros(vec![1, 3, f, t]))).unwrap();
    assert_eq!(h.shape(), vec![1, c, f, t]);
    assert!(h.value().data().iter().all(|&v| v == 0.0));
    let out = bind.decoder(g.input(Tensor::zeros(vec![1, c, f, t]))).unwrap();
    assert_eq!(out.shape(), vec![1, 2, f, t]);
    assert!(out.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn front_end_uses_only_convolutions_and_leaky_units() {
    let model = DeclipModel::new(ModelConfig::toy(), 0).unwrap();
    let g = Graph::new();
    let bind = Binder {
        graph: &g,
        store: &model.params,
        cfg: &model.config,
    };
    bind.tgram(g.input(tensor(vec![1, 1000], 1))).unwrap();
    let structural = ["input", "variable", "reshape", "pad_reflect", "slice"];
    let ops = g.op_names();
    let compute: Vec<&str> = ops.iter().copied().filter(|o| !structural.contains(o)).collect();
    assert!(compute.iter().all(|o| *o == "conv1d" || *o == "leaky_relu"), "{compute:?}");
    assert_eq!(compute.iter().filter(|o| **o == "conv1d").count(), 4);
    assert_eq!(compute.iter().filter(|o| **o == "leaky_relu").count(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn front_end_frames_match_stft_frames(extra in 0usize..32, base in 8usize..40) {
        let cfg = ModelConfig::toy();
        let n = base * cfg.stft.hop + extra;
        let model = DeclipModel::new(cfg, 0).unwrap();
        let g = Graph::inference();
        let bind = Binder { graph: &g, store: &model.params, cfg: &model.config };
        let x = signal(n, 5);
        let tg = bind.tgram(g.input(Tensor::new(vec![1, n], x.clone()).unwrap())).unwrap();
        let spec = stft(&x, &cfg.stft).unwrap();
        prop_assert_eq!(tg.shape(), vec![1, cfg.n_bins(), spec.n_frames()]);
    }
}

#[test]
fn assembled_input_is_an_exact_stack() {
    let cfg = ModelConfig::toy();
    let model = DeclipModel::new(cfg, 0).unwrap();
    let n = 1500;
    let x = signal(n, 2);
    let batch = model.prepare(&[&x]).unwrap();
    let g = Graph::inference();
    let bind = Binder {
        graph: &g,
        store: &model.params,
        cfg: &model.config,
    };
    let tg = bind.tgram(g.input(batch.waves.clone())).unwrap();
    let stacked = bind.assemble_input(g.input(batch.specs.clone()), Some(tg)).unwrap();
    let (f, t) = (cfg.n_bins(), cfg.stft.n_frames(n));
    let plane = f * t;
    let s = stacked.value();
    // Inputs are peak-normalised first, so compare against the prepared waveform.
    let direct = stft(batch.waves.data(), &cfg.stft).unwrap();
    assert_eq!(&s.data()[..2 * plane], direct.data());
    assert_eq!(&s.data()[2 * plane..], tg.value().data());

    let without = bind.assemble_input(g.input(batch.specs.clone()), None).unwrap();
    assert!(without.value().data()[2 * plane..].iter().all(|&v| v == 0.0));
    assert!(bind
        .assemble_input(g.input(batch.specs.clone()), Some(g.input(Tensor::zeros(vec![1, f, t + 1]))))
        .is_err());
}

/// Runs the named transformer on each token sequence separately.
fn per_sequence(bind: &Binder<'_, '_>, prefix: &str, seqs: Vec<Vec<f64>>, len: usize, c: usize) -> Vec<Vec<f64>> {
    seqs.into_iter()
        .map(|s| {
            let x = bind.graph.input(Tensor::new(vec![1, len, c], s).unwrap());
            bind.transformer(prefix, x).unwrap().value().data().to_vec()
        })
        .collect()
}

#[test]
fn axis_transformers_attend_along_the_right_axis() {
    let cfg = ModelConfig::toy();
    let model = DeclipModel::new(cfg, 4).unwrap();
    let g = Graph::inference();
    let bind = Binder {
        graph: &g,
        store: &model.params,
        cfg: &model.config,
    };
    let (b, c, f, t) = (2, cfg.channels, 9, 5);
    let h = tensor(vec![b, c, f, t], 3);
    let at = |bi: usize, ci: usize, fi: usize, ti: usize| h.data()[((bi * c + ci) * f + fi) * t + ti];

    let yf = bind.f_transformer(0, g.input(h.clone())).unwrap().value();
    for bi in 0..b {
        for ti in 0..t {
            let seq: Vec<f64> = (0..f).flat_map(|fi| (0..c).map(move |ci| (fi, ci))).map(|(fi, ci)| at(bi, ci, fi, ti)).collect();
            let out = &per_sequence(&bind, "blocks.0.f", vec![seq], f, c)[0];
            for fi in 0..f {
                for ci in 0..c {
                    let got = yf.data()[((bi * c + ci) * f + fi) * t + ti];
                    assert!((got - out[fi * c + ci]).abs() < 1e-12);
                }
            }
        }
    }

    let yt = bind.t_transformer(1, g.input(h.clone())).unwrap().value();
    for bi in 0..b {
        for fi in 0..f {
            let seq: Vec<f64> = (0..t).flat_map(|ti| (0..c).map(move |ci| (ti, ci))).map(|(ti, ci)| at(bi, ci, fi, ti)).collect();
            let out = &per_sequence(&bind, "blocks.1.t", vec![seq], t, c)[0];
            for ti in 0..t {
                for ci in 0..c {
                    let got = yt.data()[((bi * c + ci) * f + fi) * t + ti];
                    assert!((got - out[ti * c + ci]).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn attention_rows_are_probability_vectors() {
    let cfg = ModelConfig::toy();
    let model = DeclipModel::new(cfg, 5).unwrap();
    let h = tensor(vec![1, cfg.channels, 17, 11], 9);
    for (axis, len) in [('f', 17), ('t', 11)] {
        for block in 0..cfg.n_blocks {
            let w = attention_probe(&model.params, &cfg, &h, block, axis).unwrap();
            assert_eq!(w.shape()[1..], [cfg.n_heads, len, len]);
            for row in w.data().chunks(len) {
                assert!(row.iter().all(|&p| p >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }
    assert!(attention_probe(&model.params, &cfg, &h, 0, 'x').is_err());
}

#[test]
fn configuration_errors_are_reported() {
    let mut cfg = ModelConfig::toy();
    cfg.channels = 18;
    assert!(DeclipModel::new(cfg, 0).is_err());
    let mut cfg = ModelConfig::toy();
    cfg.stft = StftConfig::model_default();
    assert!(cfg.validate().is_err(), "front-end geometry must follow the STFT");
    let mut missing = ParamStore::new();
    for (name, shape) in parameter_shapes(&ModelConfig::toy()).into_iter().skip(1) {
        missing.insert(name, Tensor::zeros(shape)).unwrap();
    }
    assert!(DeclipModel::from_parts(ModelConfig::toy(), missing).is_err());
}

#[test]
fn disabling_the_front_end_zeroes_its_channel() {
    let mut cfg = ModelConfig::toy();
    cfg.use_tgram = false;
    let model = DeclipModel::new(cfg, 0).unwrap();
    let x = signal(1300, 4);
    let batch = model.prepare(&[&x]).unwrap();
    let g = Graph::new();
    let out = model.forward(&g, &batch).unwrap();
    assert!(out.value().all_finite());
    assert!(!g.op_names().contains(&"conv1d"));
}
