use proptest::prelude::*;
use romforge_core::reduction::LatentTrajectory;
use romforge_core::stepper::*;
use romforge_core::{ParameterVector, ProblemTag};
use romforge_nn::{Activation, Layer};

fn mu() -> ParameterVector {
    ParameterVector::new(ProblemTag::Heat, vec![0.5, 1.0, 1.5, 0.8]).unwrap()
}

fn small(encoder: MemoryEncoder, residual: bool, memory: usize, horizon: usize) -> StepperConfig {
    StepperConfig {
        memory,
        horizon,
        n_latent: 3,
        n_params: 4,
        memory_encoder: encoder,
        residual,
        embed_width: 4,
        param_layers: vec![4, 4],
        head_layers: vec![6, 6],
        lstm_width: 5,
        lstm_depth: 2,
        ccnn_channels: 4,
        ffnn_layers: vec![6],
        seed: 11,
        ..StepperConfig::default()
    }
}

fn window(memory: usize, n: usize, offset: f64) -> Vec<Vec<f64>> {
    (0..=memory)
        .map(|k| (0..n).map(|j| offset + (0.3 * k as f64 + 0.7 * j as f64).sin()).collect())
        .collect()
}

fn dense_mut(s: &mut romforge_nn::Sequential<f64>, idx: usize) -> &mut romforge_nn::layers::Dense<f64> {
    match &mut s.layers[idx] {
        Layer::Dense(d) => d,
        other => panic!("layer {idx} is {}", other.kind()),
    }
}

/// Scalar stepper realizing `u^{n+1} = a u^n` with linear layers.
fn linear_fixture(a: f64) -> StepperModel {
    let cfg = StepperConfig {
        memory: 1,
        horizon: 1,
        n_latent: 1,
        n_params: 4,
        memory_encoder: MemoryEncoder::Ffnn,
        residual: true,
        embed_width: 1,
        param_layers: vec![1],
        head_layers: vec![1],
        ffnn_layers: vec![1],
        hidden_activation: Activation::Linear,
        ..StepperConfig::default()
    };
    let mut m = StepperModel::new(cfg).unwrap();
    let set = |d: &mut romforge_nn::layers::Dense<f64>, w: &[f64]| {
        d.weights_mut().copy_from_slice(w);
        d.bias_mut().iter_mut().for_each(|b| *b = 0.0);
    };
    set(dense_mut(&mut m.net.embed, 0), &[1.0]);
    set(dense_mut(&mut m.net.memory, 1), &[0.0, 1.0]);
    set(dense_mut(&mut m.net.param, 0), &[0.0; 4]);
    set(dense_mut(&mut m.net.head, 0), &[1.0, 0.0]);
    set(dense_mut(&mut m.net.head, 1), &[a - 1.0]);
    m
}

#[test]
fn architecture_shapes() {
    let cfg = StepperConfig {
        memory: 8,
        memory_encoder: MemoryEncoder::Ccnn,
        ..StepperConfig::default()
    };
    assert_eq!(ccnn_stages(8), 4);
    let m = StepperModel::new(cfg.clone()).unwrap();
    assert_eq!(m.net.padded_len, 16);
    let convs = m.net.memory.specs().iter().filter(|s| matches!(s, romforge_nn::LayerSpec::CausalConv1d(_))).count();
    assert_eq!(convs, 4);
    // Shape trace: 16 embedded states collapse to a single vector.
    assert_eq!(m.net.memory.output_item_shape(&[16, cfg.embed_width]).unwrap(), vec![cfg.ccnn_channels]);
    assert_eq!(m.net.output_width(), cfg.horizon * cfg.n_latent);

    let f = StepperModel::new(StepperConfig {
        memory: 1,
        memory_encoder: MemoryEncoder::Ffnn,
        ..StepperConfig::default()
    })
    .unwrap();
    assert_eq!(f.net.window_width(), 2 * f.config.n_latent);
    assert_eq!(f.net.output_width(), f.config.horizon * f.config.n_latent);
    for xi in [1, 2, 3, 6, 7] {
        let c = StepperModel::new(StepperConfig {
            memory: xi,
            ..StepperConfig::default()
        })
        .unwrap();
        assert_eq!(c.net.padded_len, (xi + 1).next_power_of_two());
        let w = window(xi, 4, 0.0);
        assert_eq!(c.predict(&w, &mu()).unwrap().len(), 4);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        StepperConfig {
            memory: 0,
            ..StepperConfig::default()
        },
        StepperConfig {
            horizon: 0,
            ..StepperConfig::default()
        },
        StepperConfig {
            beta2: -1.0,
            ..StepperConfig::default()
        },
        StepperConfig {
            head_layers: vec![32, 0],
            ..StepperConfig::default()
        },
    ] {
        assert!(StepperModel::new(cfg).is_err());
    }
    let m = StepperModel::new(StepperConfig::default()).unwrap();
    assert!(m.predict(&window(7, 4, 0.0), &mu()).is_err());
    assert!(m.predict(&window(8, 3, 0.0), &mu()).is_err());
}

#[test]
fn same_seed_same_predictions() {
    for enc in [MemoryEncoder::Lstm, MemoryEncoder::Ccnn, MemoryEncoder::Ffnn] {
        let cfg = small(enc, true, 4, 2);
        let a = StepperModel::new(cfg.clone()).unwrap();
        let b = StepperModel::new(cfg.clone()).unwrap();
        let c = StepperModel::new(StepperConfig { seed: 12, ..cfg }).unwrap();
        let w = window(4, 3, 0.1);
        let pa = a.predict(&w, &mu()).unwrap();
        assert_eq!(pa, b.predict(&w, &mu()).unwrap());
        assert_ne!(pa, c.predict(&w, &mu()).unwrap());
    }
}

#[test]
fn zero_head_identity_and_zero_state() {
    for enc in [MemoryEncoder::Lstm, MemoryEncoder::Ccnn, MemoryEncoder::Ffnn] {
        let w = window(3, 3, 0.2);
        let mut r = StepperModel::new(small(enc, true, 3, 3)).unwrap();
        r.net.zero_output_layer();
        for p in r.predict(&w, &mu()).unwrap() {
            assert_eq!(p, w[3]);
        }
        let mut d = StepperModel::new(small(enc, false, 3, 3)).unwrap();
        d.net.zero_output_layer();
        for p in d.predict(&w, &mu()).unwrap() {
            assert!(p.iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn parameter_branch_is_wired() {
    for enc in [MemoryEncoder::Lstm, MemoryEncoder::Ccnn, MemoryEncoder::Ffnn] {
        let m = StepperModel::new(small(enc, true, 2, 1)).unwrap();
        let w = window(2, 3, 0.0);
        let a = m.predict(&w, &mu()).unwrap();
        let mut p = mu();
        p.values[2] += 1e-3;
        let b = m.predict(&w, &p).unwrap();
        let diff: f64 = a[0].iter().zip(&b[0]).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-9, "{enc}: {diff}");
    }
}

fn fixture_windows(memory: usize, horizon: usize) -> (Vec<LatentTrajectory>, Vec<TrainWindow>) {
    let trajs: Vec<LatentTrajectory> = (0..2)
        .map(|i| LatentTrajectory {
            parameter: ParameterVector::new(ProblemTag::Heat, vec![0.3 + i as f64, 1.0, 1.2, 0.5]).unwrap(),
            dt: 0.1,
            codes: (0..memory + horizon + 1)
                .map(|n| (0..3).map(|j| ((n + 2 * j + i) as f64 * 0.4).cos() * (1.0 + j as f64)).collect())
                .collect(),
        })
        .collect();
    let w = make_windows(&trajs, memory, horizon).unwrap();
    (trajs, w)
}

fn loss_gradient_check(enc: MemoryEncoder, residual: bool) -> f64 {
    let cfg = StepperConfig {
        beta1: 1e-2,
        beta2: 0.3,
        hidden_activation: Activation::Tanh,
        ..small(enc, residual, 3, 2)
    };
    let (trajs, windows) = fixture_windows(3, 2);
    let batch: Vec<&TrainWindow> = windows.iter().take(2).collect();
    assert_eq!(batch.len(), 2);
    let mut model = StepperModel::new(cfg).unwrap();
    model.scaling = LatentScaling::fit(&trajs, 3, residual);
    let l = stepper_loss(&model, &batch, None, 0).unwrap();
    assert!(l.penalty > 0.0);

    let blocks = model.net.param_blocks().iter().map(|b| b.len()).collect::<Vec<_>>();
    let (mut num, mut den) = (0.0f64, 0.0f64);
    let h = 1e-6;
    for (bi, &len) in blocks.iter().enumerate() {
        for k in (0..len).step_by(1 + len / 6) {
            let mut plus = model.clone();
            plus.net.param_blocks_mut()[bi][k] += h;
            let mut minus = model.clone();
            minus.net.param_blocks_mut()[bi][k] -= h;
            let fd = (stepper_loss(&plus, &batch, None, 0).unwrap().total
                - stepper_loss(&minus, &batch, None, 0).unwrap().total)
                / (2.0 * h);
            let g = l.grads[bi][k];
            num += (g - fd).powi(2);
            den += fd.powi(2);
        }
    }
    (num / den).sqrt()
}

#[test]
fn loss_gradients_match_finite_differences() {
    for enc in [MemoryEncoder::Lstm, MemoryEncoder::Ccnn, MemoryEncoder::Ffnn] {
        for residual in [true, false] {
            let e = loss_gradient_check(enc, residual);
            assert!(e < 1e-5, "{enc} residual={residual}: relative error {e:e}");
        }
    }
}

#[test]
fn loss_examples() {
    // Exact model, no regularization: zero loss.
    let mut m = linear_fixture(0.9);
    m.config.beta1 = 0.0;
    m.config.beta2 = 0.0;
    let traj = LatentTrajectory {
        parameter: mu(),
        dt: 1.0,
        codes: (0..6).map(|n| vec![2.0 * 0.9f64.powi(n)]).collect(),
    };
    let w = make_windows(std::slice::from_ref(&traj), 1, 1).unwrap();
    let refs: Vec<&TrainWindow> = w.iter().collect();
    let l0 = stepper_loss(&m, &refs, None, 0).unwrap().total;
    assert!(l0 < 1e-28, "{l0:e}");

    // Weight decay on a single nonzero weight.
    let mut z = StepperModel::new(StepperConfig {
        beta1: 0.25,
        beta2: 0.0,
        ..small(MemoryEncoder::Ffnn, true, 1, 1)
    })
    .unwrap();
    for b in z.net.param_blocks_mut() {
        b.iter_mut().for_each(|v| *v = 0.0);
    }
    z.net.param_blocks_mut()[0][0] = 3.0;
    let (_, zw) = fixture_windows(1, 1);
    let zr: Vec<&TrainWindow> = zw.iter().collect();
    let l = stepper_loss(&z, &zr, None, 0).unwrap();
    assert_eq!(l.weight_decay, 0.25 * 9.0);
    assert!((l.total - l.data - 2.25).abs() < 1e-15);
}

#[test]
fn window_count_per_trajectory() {
    let stored_steps = 20;
    let traj = LatentTrajectory {
        parameter: mu(),
        dt: 1.0,
        codes: vec![vec![0.0; 2]; stored_steps + 1],
    };
    for (xi, zeta) in [(1, 1), (8, 4), (6, 2)] {
        let w = make_windows(std::slice::from_ref(&traj), xi, zeta).unwrap();
        assert_eq!(w.len(), stored_steps - xi - zeta + 1);
        assert_eq!(w.last().unwrap().targets.len(), zeta);
    }
    assert!(make_windows(std::slice::from_ref(&traj), 18, 3).is_err());
}

#[test]
fn rollout_call_count_and_truncation() {
    let m = StepperModel::new(small(MemoryEncoder::Ccnn, true, 2, 2)).unwrap();
    let seed = window(2, 3, 0.0);
    let r = m.rollout(&seed, &mu(), 5).unwrap();
    assert_eq!(r.predict_calls, 3);
    assert_eq!(r.codes.len(), 3 + 5);
    assert_eq!(&r.codes[..3], &seed[..]);
    assert!(!r.failed());
    // Prefix property: a shorter horizon is a prefix of a longer one.
    let long = m.rollout(&seed, &mu(), 9).unwrap();
    assert_eq!(&long.codes[..r.codes.len()], &r.codes[..]);
    assert_eq!(m.rollout(&seed, &mu(), 9).unwrap(), long);
    assert_eq!(r.codes[3..5], m.predict(&seed, &mu()).unwrap()[..]);
    assert!(m.rollout(&seed, &mu(), 0).is_err());
}

#[test]
fn linear_fixture_geometric_decay() {
    let m = linear_fixture(0.9);
    let u0 = 1.7;
    let seed = vec![vec![u0 / 0.9], vec![u0]];
    let r = m.rollout(&seed, &mu(), 40).unwrap();
    for (n, c) in r.codes[1..].iter().enumerate() {
        let exact = u0 * 0.9f64.powi(n as i32);
        assert!((c[0] - exact).abs() < 1e-12, "step {n}: {} vs {exact}", c[0]);
    }
}

#[test]
fn rollout_reports_non_finite_state() {
    let m = linear_fixture(1e200);
    let seed = vec![vec![1.0], vec![1.0]];
    let r = m.rollout(&seed, &mu(), 10).unwrap();
    assert_eq!(r.failed_at, Some(3));
    assert_eq!(r.codes.len(), 3);
    assert!(r.codes.iter().all(|c| c[0].is_finite()));
}

#[test]
fn constant_trajectory_is_learned() {
    let cfg = StepperConfig {
        beta1: 0.0,
        beta2: 0.0,
        training: StepperTrainConfig {
            epochs: 300,
            batch_size: 8,
            learning_rate: 3e-3,
            validation_fraction: 0.2,
            jacobian_windows: None,
        },
        ..small(MemoryEncoder::Ccnn, true, 4, 2)
    };
    let traj = LatentTrajectory {
        parameter: mu(),
        dt: 1.0,
        codes: vec![vec![0.4, -1.2, 2.0]; 40],
    };
    let (m, h) = train_stepper(StepperModel::new(cfg).unwrap(), std::slice::from_ref(&traj)).unwrap();
    let (fit, val) = split_windows(40 - 4 - 2, 0.2, m.config.seed);
    assert_eq!(h.n_validation_windows, val.len());
    assert_eq!(h.n_train_windows, fit.len());
    let windows = make_windows(std::slice::from_ref(&traj), 4, 2).unwrap();
    let vw: Vec<&TrainWindow> = val.iter().map(|&i| &windows[i]).collect();
    let e = one_step_error(&m, &vw).unwrap();
    assert!(e < 1e-6, "one-step error {e:e}");
}

#[test]
fn training_is_deterministic_and_decreases_loss() {
    let (trajs, _) = fixture_windows(20, 0);
    let cfg = StepperConfig {
        training: StepperTrainConfig {
            epochs: 15,
            batch_size: 4,
            jacobian_windows: Some(2),
            ..StepperTrainConfig::default()
        },
        ..small(MemoryEncoder::Lstm, true, 3, 2)
    };
    let (a, ha) = train_stepper(StepperModel::new(cfg.clone()).unwrap(), &trajs).unwrap();
    let (b, hb) = train_stepper(StepperModel::new(cfg).unwrap(), &trajs).unwrap();
    assert_eq!(ha, hb);
    assert!(ha.train_loss.iter().all(|l| l.is_finite()));
    assert!(ha.train_loss.last() < ha.train_loss.first());
    let w = window(3, 3, 0.0);
    assert_eq!(a.predict(&w, &mu()).unwrap(), b.predict(&w, &mu()).unwrap());
}

#[test]
fn model_file_round_trip() {
    let (trajs, _) = fixture_windows(8, 0);
    let mut m = StepperModel::new(small(MemoryEncoder::Lstm, false, 2, 3)).unwrap();
    m.scaling = LatentScaling::fit(&trajs, 3, false);
    let bytes = m.to_model_file(None).to_bytes().unwrap();
    let back = StepperModel::from_model_file(&romforge_nn::ModelFile::from_bytes(&bytes).unwrap()).unwrap();
    let w = window(2, 3, 0.5);
    assert_eq!(m.predict(&w, &mu()).unwrap(), back.predict(&w, &mu()).unwrap());
    assert_eq!(back.config, m.config);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn zero_head_rollout_is_constant(xi in 1usize..9, zeta in 1usize..5, enc in 0usize..3, steps in 1usize..12, off in -2.0f64..2.0) {
        let enc = [MemoryEncoder::Lstm, MemoryEncoder::Ccnn, MemoryEncoder::Ffnn][enc];
        let mut m = StepperModel::new(small(enc, true, xi, zeta)).unwrap();
        m.net.zero_output_layer();
        let seed = window(xi, 3, off);
        let r = m.rollout(&seed, &mu(), steps).unwrap();
        prop_assert_eq!(r.codes.len(), xi + 1 + steps);
        for c in &r.codes[xi + 1..] {
            prop_assert_eq!(c, &seed[xi]);
        }
    }

    #[test]
    fn rollout_ignores_nothing_but_the_window(xi in 1usize..6, k in 0usize..6, delta in 0.01f64..1.0) {
        // Perturbing a seed state changes predictions only through the
        // window; no state predicted before the perturbation leaves the
        // window changes once it has slid past.
        let m = StepperModel::new(small(MemoryEncoder::Ccnn, true, xi, 1)).unwrap();
        let seed = window(xi, 3, 0.0);
        let mut pert = seed.clone();
        let k = k.min(xi);
        pert[k][0] += delta;
        let a = m.rollout(&seed, &mu(), 4).unwrap();
        let b = m.rollout(&pert, &mu(), 4).unwrap();
        for n in 0..=xi {
            if n != k {
                prop_assert_eq!(&a.codes[n], &b.codes[n]);
            }
        }
        prop_assert!(a.codes[xi + 1] != b.codes[xi + 1] || k < xi);
    }
}
