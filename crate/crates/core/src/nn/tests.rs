use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn arch(input: &[usize], classes: usize, layers: Vec<LayerSpec>) -> Architecture {
    Architecture {
        name: "test".into(),
        input_shape: input.to_vec(),
        classes,
        layers,
    }
}

fn linear(units: usize) -> LayerSpec {
    LayerSpec::Linear { units }
}

/// Straight-line affine -> tanh -> affine, written without the layer machinery.
fn fc_oracle(x: &Tensor, w1: &[f64], b1: &[f64], w2: &[f64], b2: &[f64], hidden: usize, classes: usize) -> Vec<f64> {
    let d = x.row_len();
    let mut out = Vec::new();
    for i in 0..x.rows() {
        let xi = x.row(i);
        let mut h = vec![0.0; hidden];
        for (u, hu) in h.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in 0..d {
                acc += w1[u * d + k] * xi[k];
            }
            *hu = (acc + b1[u]).tanh();
        }
        for c in 0..classes {
            let mut acc = 0.0;
            for u in 0..hidden {
                acc += w2[c * hidden + u] * h[u];
            }
            out.push(acc + b2[c]);
        }
    }
    out
}

#[test]
fn fc_a_matches_hand_rolled_oracle() {
    let model = Model::new(Architecture::preset("fc-a").unwrap(), 17).unwrap();
    let mut model = model;
    // Non-zero biases so they are exercised too.
    for p in model.params_mut() {
        if p.name.ends_with("bias") {
            for (k, v) in p.value.data_mut().iter_mut().enumerate() {
                *v = 0.01 * k as f64 - 0.03;
            }
        }
    }
    let x = random_tensor(&[5, 784], 3);
    let logits = model.predict(&x).unwrap();
    let p = model.params();
    let expect = fc_oracle(
        &x,
        p[0].value.data(),
        p[1].value.data(),
        p[2].value.data(),
        p[3].value.data(),
        10,
        10,
    );
    for (a, b) in logits.data().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn zero_weight_linear_outputs_bias() {
    let mut model = Model::new(arch(&[4], 3, vec![linear(3)]), 0).unwrap();
    model.params_mut()[0].value = Tensor::zeros(&[3, 4]);
    model.params_mut()[1].value = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
    let logits = model.predict(&random_tensor(&[6, 4], 1)).unwrap();
    for i in 0..6 {
        assert_eq!(logits.row(i), &[0.5, -1.0, 2.0]);
    }
}

#[test]
fn identity_one_by_one_conv_layer() {
    let layers = vec![
        LayerSpec::Conv2d {
            filters: 1,
            kernel: 1,
            stride: 1,
            padding: 0,
        },
        LayerSpec::Flatten,
    ];
    let mut model = Model::new(arch(&[1, 2, 2], 4, layers), 0).unwrap();
    model.params_mut()[0].value = Tensor::filled(&[1, 1, 1, 1], 1.0);
    let x = random_tensor(&[3, 1, 2, 2], 4);
    let y = model.predict(&x).unwrap();
    assert_eq!(y.data(), x.data());
}

#[test]
fn linear_input_gradient_is_gt_w() {
    let model = Model::new(arch(&[3], 2, vec![linear(2)]), 9).unwrap();
    let x = random_tensor(&[2, 3], 5);
    let g = Tensor::new(vec![2, 2], vec![1.0, -2.0, 0.5, 0.25]).unwrap();
    let (_, cache) = model.forward_inference(&x, Mode::Eval).unwrap();
    let grads = model.backward(cache, &g).unwrap();
    let w = model.params()[0].value.data();
    for i in 0..2 {
        for k in 0..3 {
            let expect = g.row(i)[0] * w[k] + g.row(i)[1] * w[3 + k];
            assert!((grads.input.row(i)[k] - expect).abs() < 1e-15);
        }
    }
    // dW = g^T x, db = column sums of g
    let dw = grads.params[0].data();
    for o in 0..2 {
        for k in 0..3 {
            let expect = g.row(0)[o] * x.row(0)[k] + g.row(1)[o] * x.row(1)[k];
            assert!((dw[o * 3 + k] - expect).abs() < 1e-15);
        }
    }
    assert_eq!(grads.params[1].data(), &[1.5, -1.75]);
}

#[test]
fn zero_upstream_gradient_gives_zero_gradients() {
    let mut model = Model::new(Architecture::preset("cnn-a-small").unwrap().with_input_shape(&[1, 8, 8]), 2).unwrap();
    let x = random_tensor(&[2, 1, 8, 8], 6);
    let (_, cache) = model.forward(&x, Mode::Train).unwrap();
    let grads = model.backward(cache, &Tensor::zeros(&[2, 10])).unwrap();
    assert_eq!(grads.input.max_abs(), 0.0);
    assert!(grads.params.iter().all(|p| p.max_abs() == 0.0));
}

#[test]
fn stale_cache_is_rejected() {
    let mut model = Model::new(arch(&[2], 2, vec![linear(2)]), 0).unwrap();
    let x = random_tensor(&[1, 2], 0);
    let (_, cache) = model.forward(&x, Mode::Eval).unwrap();
    model.params_mut()[1].value.data_mut()[0] = 1.0;
    let err = model.backward(cache, &Tensor::zeros(&[1, 2])).unwrap_err();
    assert!(matches!(err, Error::ContractViolation(_)));

    let other = model.clone();
    let (_, cache) = model.forward(&x, Mode::Eval).unwrap();
    assert!(matches!(
        other.backward(cache, &Tensor::zeros(&[1, 2])),
        Err(Error::ContractViolation(_))
    ));
}

#[test]
fn shape_errors_name_the_layer() {
    let bad = arch(&[1, 5, 5], 2, vec![
        LayerSpec::Conv2d {
            filters: 2,
            kernel: 2,
            stride: 2,
            padding: 0,
        },
    ]);
    match Model::new(bad, 0).unwrap_err() {
        Error::Shape { layer, .. } => assert_eq!(layer, Some(0)),
        other => panic!("unexpected {other:?}"),
    }
    let unflattened = arch(&[1, 4, 4], 2, vec![linear(2)]);
    assert!(matches!(
        Model::new(unflattened, 0),
        Err(Error::Shape { layer: Some(0), .. })
    ));
    let model = Model::new(arch(&[3], 2, vec![linear(2)]), 0).unwrap();
    assert!(matches!(
        model.predict(&Tensor::zeros(&[2, 4])),
        Err(Error::Shape { layer: Some(0), .. })
    ));
}

#[test]
fn non_finite_activation_is_reported() {
    let mut model = Model::new(arch(&[2], 2, vec![linear(2)]), 0).unwrap();
    model.params_mut()[0].value.data_mut()[0] = f64::INFINITY;
    let x = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
    assert!(matches!(model.predict(&x), Err(Error::NonFinite { .. })));
}

#[test]
fn eval_forward_is_bitwise_deterministic() {
    let model = Model::new(Architecture::preset("cnn-a-small").unwrap(), 4).unwrap();
    let x = random_tensor(&[3, 1, 28, 28], 8);
    let a = model.predict(&x).unwrap();
    let b = model.predict(&x).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn same_seed_same_train_gradients() {
    let x = random_tensor(&[4, 1, 8, 8], 12);
    let labels = [0, 3, 9, 3];
    let run = || {
        let mut model = Model::new(Architecture::preset("cnn-a-small").unwrap().with_input_shape(&[1, 8, 8]), 77).unwrap();
        let (logits, cache) = model.forward(&x, Mode::Train).unwrap();
        let (_, g) = cross_entropy(&logits, &labels).unwrap();
        model.backward(cache, &g).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
}

#[test]
fn dropout_modes() {
    let model_arch = arch(&[50], 50, vec![LayerSpec::Dropout { p: 0.5 }]);
    let mut model = Model::new(model_arch, 1).unwrap();
    let x = Tensor::filled(&[2, 50], 1.0);
    let (train, _) = model.forward(&x, Mode::Train).unwrap();
    assert!(train.data().iter().all(|&v| v == 0.0 || v == 2.0));
    assert!(train.data().contains(&0.0));
    let (simplify, _) = model.forward(&x, Mode::Simplify).unwrap();
    assert_eq!(simplify, x);
    assert_eq!(model.predict(&x).unwrap(), x);
}

#[test]
fn batchnorm_running_stats_only_move_in_train_mode() {
    let layers = vec![LayerSpec::BatchNorm {
        momentum: 0.5,
        epsilon: 1e-5,
    }];
    let mut model = Model::new(arch(&[2], 2, layers), 0).unwrap();
    let x = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
    let before = model.running_buffers();
    model.forward(&x, Mode::Simplify).unwrap();
    assert_eq!(model.running_buffers(), before);
    model.forward(&x, Mode::Train).unwrap();
    let after = &model.running_buffers()[0];
    assert_eq!(after.mean, vec![1.0, 2.0]);
    // unbiased batch variance: 2 and 8, blended with the initial 1 at momentum 0.5
    assert_eq!(after.var, vec![1.5, 4.5]);
}

#[test]
fn every_layer_kind_passes_grad_check_in_all_modes() {
    let cases = gradcheck::layer_cases();
    let kinds: Vec<&str> = cases.iter().map(|c| c.name.as_str()).collect();
    for kind in ["linear", "conv2d", "maxpool2d", "relu", "tanh", "batchnorm", "dropout", "flatten"] {
        assert!(kinds.contains(&kind), "{kind} missing from suite");
    }
    for case in &cases {
        let entries = gradcheck::run_case(case, 5, &gradcheck::analytic_gradients).unwrap();
        assert_eq!(entries.len(), 3);
        for e in entries {
            assert!(e.passed(), "{} {:?}: {:?}", e.case, e.mode, e.report);
        }
    }
}

#[test]
fn zero_model_zero_input_grad_check_is_exact() {
    let mut model = Model::new(arch(&[3], 2, vec![linear(4), LayerSpec::Tanh, linear(2)]), 0).unwrap();
    for p in model.params_mut() {
        p.value = Tensor::zeros(p.value.shape());
    }
    let report = grad_check(&model, &Tensor::zeros(&[2, 3]), &[0, 1], 1e-5, Mode::Eval).unwrap();
    assert!(report.max_rel_error < 1e-10, "{report:?}");
}

#[test]
fn corrupted_backward_fails_grad_check() {
    let model = Model::new(arch(&[3], 2, vec![linear(4), LayerSpec::Tanh, linear(2)]), 3).unwrap();
    let x = random_tensor(&[2, 3], 1);
    let report = grad_check_with(&model, &x, &[0, 1], 1e-5, Mode::Eval, |m, x, y, mode, masks| {
        let mut g = gradcheck::analytic_gradients(m, x, y, mode, masks)?;
        g.input.data_mut()[0] += 0.01;
        Ok(g)
    })
    .unwrap();
    assert!(report.max_rel_error >= 1e-4);
    assert_eq!(report.worst.0, "input");
}

fn naive_conv(x: &Tensor, k: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
    let [n, c, h, w] = x.shape().try_into().unwrap();
    let [co, _, kh, kw] = k.shape().try_into().unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let (xd, kd) = (x.data(), k.data());
    let mut out = vec![0.0; n * co * oh * ow];
    for bi in 0..n {
        for o in 0..co {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for p in 0..kh {
                            for q in 0..kw {
                                let r = (i * stride + p) as isize - pad as isize;
                                let s = (j * stride + q) as isize - pad as isize;
                                if r < 0 || s < 0 || r >= h as isize || s >= w as isize {
                                    continue;
                                }
                                acc += kd[((o * c + ci) * kh + p) * kw + q]
                                    * xd[((bi * c + ci) * h + r as usize) * w + s as usize];
                            }
                        }
                    }
                    out[((bi * co + o) * oh + i) * ow + j] = acc + b.data()[o];
                }
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv2d_equals_naive_loops(
        n in 1usize..=2, c in 1usize..=3, h in 1usize..=8, w in 1usize..=8,
        co in 1usize..=3, kh in 1usize..=3, kw in 1usize..=3,
        stride in 1usize..=2, pad in 0usize..=1, seed in any::<u64>(),
    ) {
        prop_assume!(h + 2 * pad >= kh && w + 2 * pad >= kw);
        prop_assume!((h + 2 * pad - kh) % stride == 0 && (w + 2 * pad - kw) % stride == 0);
        let x = random_tensor(&[n, c, h, w], seed);
        let k = random_tensor(&[co, c, kh, kw], seed ^ 1);
        let b = random_tensor(&[co], seed ^ 2);
        let y = conv2d(&x, &k, &b, stride, pad).unwrap();
        prop_assert_eq!(y.data(), &naive_conv(&x, &k, &b, stride, pad)[..]);
    }

    #[test]
    fn cross_entropy_gradient_rows_sum_to_zero(
        rows in proptest::collection::vec(proptest::collection::vec(-30.0f64..30.0, 4), 1..6),
        label_seed in any::<u64>(),
    ) {
        let logits = Tensor::from_rows(&rows).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(label_seed);
        let labels: Vec<usize> = (0..rows.len()).map(|_| rng.random_range(0..4)).collect();
        let (_, grad) = cross_entropy(&logits, &labels).unwrap();
        for i in 0..rows.len() {
            prop_assert!(grad.row(i).iter().sum::<f64>().abs() < 1e-15);
        }
    }
}
