use proptest::prelude::*;
use romforge_nn::layers::*;
use romforge_nn::{glorot_init, Activation, Dual, LayerSpec, Sequential, Tensor};

/// Loss `Σ r·y` with a fixed pseudo-random weighting `r`.
fn loss(net: &Sequential<f64>, x: &Tensor<f64>, training: bool) -> f64 {
    let y = net.forward(x, training).unwrap();
    y.data().iter().enumerate().map(|(k, v)| weight(k) * v).sum()
}

fn weight(k: usize) -> f64 {
    ((k * 37 + 11) % 17) as f64 / 8.0 - 1.0
}

fn check(specs: Vec<LayerSpec>, input_shape: Vec<usize>, training: bool, tol: f64) {
    let mut net = Sequential::<f64>::from_specs(specs).unwrap();
    glorot_init(&mut net, 42);
    // Perturb non-weight parameters so biases and BN affine terms are exercised.
    for layer in &mut net.layers {
        for (j, p) in layer.params_mut().iter_mut().enumerate() {
            *p += 0.05 * ((j % 7) as f64 - 3.0);
        }
    }
    let x = Tensor::from_fn(input_shape, |k| ((k * 13 + 5) % 23) as f64 / 11.0 - 1.0);
    let (y, caches) = net.forward_cached(&x, training).unwrap();
    let dy = Tensor::from_fn(y.shape().to_vec(), weight);
    let (grads, dx) = net.backward(&caches, &dy).unwrap();
    let h = 1e-6;
    for li in 0..net.layers.len() {
        for j in 0..net.layers[li].params().len() {
            let mut p = net.clone();
            p.layers[li].params_mut()[j] += h;
            let up = loss(&p, &x, training);
            p.layers[li].params_mut()[j] -= 2.0 * h;
            let dn = loss(&p, &x, training);
            let fd = (up - dn) / (2.0 * h);
            let an = grads[li][j];
            assert!((fd - an).abs() <= tol * (1.0 + fd.abs()), "layer {li} param {j}: fd {fd} vs {an}");
        }
    }
    for k in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[k] += h;
        let up = loss(&net, &xp, training);
        xp.data_mut()[k] -= 2.0 * h;
        let dn = loss(&net, &xp, training);
        let fd = (up - dn) / (2.0 * h);
        assert!((fd - dx.data()[k]).abs() <= tol * (1.0 + fd.abs()), "input {k}: fd {fd} vs {}", dx.data()[k]);
    }
}

fn dense(i: usize, o: usize, a: Activation) -> LayerSpec {
    LayerSpec::Dense(DenseSpec {
        in_width: i,
        out_width: o,
        activation: a,
        bias: true,
    })
}

fn conv(ci: usize, co: usize, k: usize, stride: usize, transposed: bool, a: Activation) -> LayerSpec {
    LayerSpec::Conv2d(Conv2dSpec {
        in_channels: ci,
        out_channels: co,
        kernel: [k, k],
        stride,
        transposed,
        activation: a,
    })
}

#[test]
fn dense_gradients() {
    check(vec![dense(5, 4, Activation::Tanh), dense(4, 3, Activation::Sigmoid)], vec![3, 5], false, 1e-6);
}

#[test]
fn dense_time_distributed_gradients() {
    check(vec![dense(3, 2, Activation::LeakyRelu)], vec![2, 4, 3], false, 1e-6);
}

#[test]
fn conv2d_gradients() {
    check(vec![conv(2, 3, 3, 1, false, Activation::Tanh)], vec![2, 2, 5, 4], false, 1e-6);
    check(vec![conv(2, 3, 5, 2, false, Activation::Linear)], vec![1, 2, 7, 6], false, 1e-6);
}

#[test]
fn transposed_conv2d_gradients() {
    check(vec![conv(3, 2, 5, 2, true, Activation::Tanh)], vec![2, 3, 3, 4], false, 1e-6);
}

#[test]
fn batch_norm_gradients_training_and_inference() {
    let bn = LayerSpec::BatchNorm(BatchNormSpec::new(2));
    check(vec![conv(1, 2, 3, 1, false, Activation::Tanh), bn.clone()], vec![3, 1, 4, 4], true, 1e-5);
    check(vec![conv(1, 2, 3, 1, false, Activation::Tanh), bn], vec![3, 1, 4, 4], false, 1e-6);
}

#[test]
fn lstm_gradients() {
    check(
        vec![
            LayerSpec::Lstm(LstmSpec {
                input_width: 3,
                hidden_width: 4,
            }),
            LayerSpec::LastStep,
        ],
        vec![2, 5, 3],
        false,
        1e-6,
    );
}

#[test]
fn causal_conv_gradients() {
    check(
        vec![LayerSpec::CausalConv1d(CausalConv1dSpec {
            in_channels: 3,
            out_channels: 2,
            kernel_length: 2,
            left_pad: 1,
            stride: 2,
            activation: Activation::Tanh,
        })],
        vec![2, 7, 3],
        false,
        1e-6,
    );
}

#[test]
fn reshape_in_the_middle() {
    check(
        vec![
            dense(4, 18, Activation::Tanh),
            LayerSpec::Reshape { shape: vec![2, 3, 3] },
            conv(2, 1, 3, 1, false, Activation::Linear),
        ],
        vec![2, 4],
        false,
        1e-6,
    );
}

#[test]
fn non_finite_output_reports_layer() {
    let mut net = Sequential::<f64>::from_specs([dense(2, 2, Activation::Linear), dense(2, 1, Activation::Linear)]).unwrap();
    net.layers[1].params_mut()[0] = f64::INFINITY;
    let x = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
    net.layers[0].params_mut().iter_mut().for_each(|p| *p = 1.0);
    match net.forward(&x, false) {
        Err(romforge_nn::NnError::NonFinite { layer, .. }) => assert_eq!(layer, 1),
        other => panic!("expected non-finite error, got {other:?}"),
    }
}

#[test]
fn f32_network_runs() {
    let mut net = Sequential::<f32>::from_specs([dense(3, 2, Activation::Tanh)]).unwrap();
    glorot_init(&mut net, 1);
    let y = net.forward(&Tensor::from_fn(vec![4, 3], |k| k as f32 * 0.1), false).unwrap();
    assert_eq!(y.shape(), &[4, 2]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Dual forward pass gives the exact directional derivative of the real one.
    #[test]
    fn dual_forward_is_directional_derivative(seed in 0u64..1000, dir in prop::collection::vec(-1.0f64..1.0, 4)) {
        let mut net = Sequential::<f64>::from_specs([dense(4, 6, Activation::Tanh), dense(6, 2, Activation::Sigmoid)]).unwrap();
        glorot_init(&mut net, seed);
        let x: Vec<f64> = (0..4).map(|k| (k as f64 - 1.5) * 0.3).collect();
        let lifted = net.map_scalar(Dual::constant);
        let xd = Tensor::new(vec![1, 4], x.iter().zip(&dir).map(|(&a, &b)| Dual::new(a, b)).collect()).unwrap();
        let yd = lifted.forward(&xd, false).unwrap();
        let h = 1e-6;
        let shift = |s: f64| {
            let xs: Vec<f64> = x.iter().zip(&dir).map(|(&a, &b)| a + s * b).collect();
            net.forward(&Tensor::new(vec![1, 4], xs).unwrap(), false).unwrap().into_data()
        };
        let (up, dn) = (shift(h), shift(-h));
        for k in 0..2 {
            let fd = (up[k] - dn[k]) / (2.0 * h);
            prop_assert!((fd - yd.data()[k].eps).abs() < 1e-7);
        }
    }

    /// The linear map's penalty is invariant to the input point.
    #[test]
    fn linear_penalty_is_input_independent(a in prop::collection::vec(-3.0f64..3.0, 6), b in prop::collection::vec(-3.0f64..3.0, 6)) {
        let mut net = Sequential::<f64>::from_specs([dense(3, 4, Activation::Linear)]).unwrap();
        glorot_init(&mut net, 2);
        let pa = romforge_nn::jacobian_penalty(&net, &Tensor::new(vec![2, 3], a).unwrap(), 0..3, Default::default(), 0).unwrap();
        let pb = romforge_nn::jacobian_penalty(&net, &Tensor::new(vec![2, 3], b).unwrap(), 0..3, Default::default(), 0).unwrap();
        prop_assert!((pa.mean - pb.mean).abs() < 1e-12);
    }

    /// Conv output shapes follow ceil(n / stride) and transposed s·n.
    #[test]
    fn conv_shape_rules(h in 1usize..20, w in 1usize..20, stride in 1usize..3) {
        let net = Sequential::<f64>::from_specs([conv(1, 1, 5, stride, false, Activation::Linear)]).unwrap();
        let s = net.output_item_shape(&[1, h, w]).unwrap();
        prop_assert_eq!(s, vec![1, h.div_ceil(stride), w.div_ceil(stride)]);
        let t = Sequential::<f64>::from_specs([conv(1, 1, 5, stride, true, Activation::Linear)]).unwrap();
        prop_assert_eq!(t.output_item_shape(&[1, h, w]).unwrap(), vec![1, h * stride, w * stride]);
    }
}
