use declip_autodiff::{Graph, ParamStore, Tensor};
use declip_model::{AdamW, AdamWConfig, ModelError};

fn store(values: &[(&str, Vec<f64>)]) -> ParamStore {
    let mut s = ParamStore::new();
    for (name, v) in values {
        s.insert(*name, Tensor::new(vec![v.len()], v.clone()).unwrap()).unwrap();
    }
    s
}

fn grads(values: &[(&str, Vec<f64>)]) -> Vec<(String, Tensor)> {
    values
        .iter()
        .map(|(n, v)| (n.to_string(), Tensor::new(vec![v.len()], v.clone()).unwrap()))
        .collect()
}

#[test]
fn first_step_moves_by_learning_rate() {
    for g in [0.3, -2.0, 1e-3] {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(cfg);
        let mut p = store(&[("w", vec![0.0])]);
        opt.step(&mut p, &grads(&[("w", vec![g])])).unwrap();
        // m_hat = g, v_hat = g^2 at t = 1.
        let expected = -cfg.lr * g / (g.abs() + cfg.eps);
        let w = p.get("w").unwrap().data()[0];
        assert!((w - expected).abs() < 1e-15, "{w} vs {expected}");
        assert!((w.abs() - cfg.lr).abs() < 1e-7);
        assert_eq!(w.signum(), -g.signum());
    }
}

/// Direct transcription of the adaptive-moment update without decay.
fn reference_adam(w: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64], t: i32, cfg: &AdamWConfig) {
    for i in 0..w.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let mh = m[i] / (1.0 - cfg.beta1.powi(t));
        let vh = v[i] / (1.0 - cfg.beta2.powi(t));
        w[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
    }
}

#[test]
fn zero_decay_matches_plain_adaptive_moments() {
    let cfg = AdamWConfig {
        lr: 0.01,
        weight_decay: 0.0,
        ..AdamWConfig::default()
    };
    let mut opt = AdamW::new(cfg);
    let init = vec![0.5, -1.0, 2.0];
    let mut p = store(&[("w", init.clone())]);
    let (mut w, mut m, mut v) = (init, vec![0.0; 3], vec![0.0; 3]);
    for t in 1..=25 {
        let g: Vec<f64> = w.iter().map(|x| 2.0 * x + (t as f64 * 0.3).sin()).collect();
        opt.step(&mut p, &grads(&[("w", g.clone())])).unwrap();
        reference_adam(&mut w, &mut m, &mut v, &g, t, &cfg);
        assert_eq!(p.get("w").unwrap().data(), w.as_slice());
    }
    assert_eq!(opt.steps_taken(), 25);
}

#[test]
fn decay_is_decoupled_from_the_gradient() {
    let cfg = AdamWConfig {
        lr: 0.1,
        weight_decay: 0.5,
        ..AdamWConfig::default()
    };
    let mut opt = AdamW::new(cfg);
    let mut p = store(&[("w", vec![2.0])]);
    // With a zero gradient only the decay acts.
    opt.step(&mut p, &grads(&[("w", vec![0.0])])).unwrap();
    assert_eq!(p.get("w").unwrap().data()[0], 2.0 * (1.0 - 0.1 * 0.5));
}

#[test]
fn quadratic_bowl_converges() {
    let target = [1.5, -0.75, 3.0, 0.0];
    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: 0.0,
        ..AdamWConfig::default()
    });
    let mut p = store(&[("w", vec![0.0; 4])]);
    let mut steps = 0;
    // A decaying rate lets the iterate settle instead of orbiting the minimum.
    while steps < 500 {
        let g = Graph::new();
        let w = g.param(&p, "w").unwrap();
        let t = g.input(Tensor::new(vec![4], target.to_vec()).unwrap());
        let loss = w.sub(&t).unwrap().square().sum();
        g.backward(loss).unwrap();
        opt.config.lr = 0.2 * 0.99f64.powi(steps);
        opt.step(&mut p, &g.param_grads()).unwrap();
        steps += 1;
        let w = p.get("w").unwrap().data();
        if w.iter().zip(&target).all(|(a, b)| (a - b).abs() < 1e-6) {
            break;
        }
    }
    let w = p.get("w").unwrap().data();
    let err = w.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-6, "after {steps} steps error {err:e}");
}

#[test]
fn non_finite_gradient_aborts_without_touching_parameters() {
    let mut opt = AdamW::new(AdamWConfig::default());
    let mut p = store(&[("a", vec![1.0, 2.0]), ("b", vec![3.0])]);
    let before = p.clone();
    let err = opt
        .step(&mut p, &grads(&[("a", vec![0.1, 0.2]), ("b", vec![f64::NAN])]))
        .unwrap_err();
    match err {
        ModelError::Numerical(msg) => assert!(msg.contains('b') && msg.contains("element 0"), "{msg}"),
        other => panic!("unexpected error {other:?}"),
    }
    assert_eq!(p, before);
    assert_eq!(opt.steps_taken(), 0);
    assert!(opt.step(&mut p, &grads(&[("a", vec![1.0])])).is_err(), "shape mismatch");
    assert!(opt.step(&mut p, &grads(&[("missing", vec![1.0])])).is_err());
}
