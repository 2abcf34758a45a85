use proptest::prelude::*;

use super::ops::{self, conv2d, conv2d_transpose};
use super::testutil::{gradcheck, rng};
use super::*;
use crate::error::Error;

/// Direct sliding-window correlation, written independently of im2col.
fn conv_oracle(x: &Tensor4<f64>, k: &Tensor4<f64>, stride: usize, pad: usize) -> Tensor4<f64> {
    let [n, c, h, w] = x.shape();
    let [co, _, kh, kw] = k.shape();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor4::zeros([n, co, oh, ow]);
    for s in 0..n {
        for o in 0..co {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for a in 0..kh {
                            for b in 0..kw {
                                let y = (i * stride + a) as isize - pad as isize;
                                let xx = (j * stride + b) as isize - pad as isize;
                                if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                                    acc += x.at(s, ci, y as usize, xx as usize) * k.at(o, ci, a, b);
                                }
                            }
                        }
                    }
                    out.set(s, o, i, j, acc);
                }
            }
        }
    }
    out
}

fn ramp(shape: [usize; 4]) -> Tensor4<f64> {
    let n = shape.iter().product::<usize>();
    Tensor4::from_vec(shape, (0..n).map(|i| i as f64).collect()).unwrap()
}

#[test]
fn conv_identity_kernel() {
    let x = ramp([1, 1, 4, 4]);
    let k = Tensor4::full([1, 1, 1, 1], 1.0);
    assert_eq!(conv2d(&x, &k, 1, 0).unwrap(), x);
}

#[test]
fn conv_average_kernel_stride_two() {
    let x = ramp([1, 1, 4, 4]);
    let k = Tensor4::full([1, 1, 3, 3], 1.0 / 9.0);
    let y = conv2d(&x, &k, 2, 1).unwrap();
    assert_eq!(y.shape(), [1, 1, 2, 2]);
    let expected = conv_oracle(&x, &k, 2, 1);
    for (a, b) in y.data().iter().zip(expected.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    // top-left window covers x[0..2, 0..2] = {0,1,4,5}
    assert!((y.data()[0] - 10.0 / 9.0).abs() < 1e-12);
}

#[test]
fn conv_matches_oracle_on_random_shapes() {
    let mut r = rng(1);
    for (stride, pad, k) in [(1, 0, 3), (1, 1, 3), (2, 1, 3), (2, 1, 4), (1, 3, 7), (2, 0, 2)] {
        let x = Tensor4::randn([2, 3, 9, 8], 1.0, &mut r);
        let w = Tensor4::randn([4, 3, k, k], 1.0, &mut r);
        let got = conv2d(&x, &w, stride, pad).unwrap();
        let want = conv_oracle(&x, &w, stride, pad);
        assert_eq!(got.shape(), want.shape());
        let err = got.zip_map(&want, |a, b| a - b).max_abs();
        assert!(err < 1e-10, "stride {stride} pad {pad} k {k}: {err}");
    }
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut r = rng(2);
    let x = Tensor4::randn([2, 2, 5, 5], 1.0, &mut r);
    let k = Tensor4::randn([3, 2, 3, 3], 1.0, &mut r);
    let err = gradcheck(&[x, k], |_, v| v[0].conv2d(v[1], 2, 1));
    assert!(err < 1e-4, "{err}");
}

#[test]
fn conv_shape_mismatch_names_dimension() {
    let x = Tensor4::<f64>::zeros([1, 2, 4, 4]);
    let k = Tensor4::zeros([1, 3, 3, 3]);
    match conv2d(&x, &k, 1, 1) {
        Err(Error::Shape { dim, expected, actual, .. }) => {
            assert_eq!(dim, "input channels");
            assert_eq!((expected, actual), (3, 2));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(conv2d(&x, &Tensor4::zeros([1, 2, 3, 3]), 0, 1), Err(Error::InvalidArgument(_))));
}

#[test]
fn transpose_unit_kernel_is_identity() {
    let x = ramp([1, 1, 3, 5]);
    let k = Tensor4::full([1, 1, 1, 1], 1.0);
    assert_eq!(conv2d_transpose(&x, &k, 1, 0).unwrap(), x);
}

#[test]
fn transpose_matches_scatter_add() {
    let x = Tensor4::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let k = Tensor4::from_vec([1, 1, 2, 2], vec![1.0, 10.0, 100.0, 1000.0]).unwrap();
    let y = conv2d_transpose(&x, &k, 2, 0).unwrap();
    assert_eq!(y.shape(), [1, 1, 4, 4]);
    let mut expected = Tensor4::zeros([1, 1, 4, 4]);
    for i in 0..2 {
        for j in 0..2 {
            for a in 0..2 {
                for b in 0..2 {
                    let v = expected.at(0, 0, 2 * i + a, 2 * j + b) + x.at(0, 0, i, j) * k.at(0, 0, a, b);
                    expected.set(0, 0, 2 * i + a, 2 * j + b, v);
                }
            }
        }
    }
    assert_eq!(y, expected);
}

#[test]
fn transpose_output_size_formula() {
    let x = Tensor4::<f64>::zeros([1, 3, 8, 8]);
    let k = Tensor4::zeros([3, 2, 4, 4]);
    let y = conv2d_transpose(&x, &k, 2, 1).unwrap();
    assert_eq!(y.shape(), [1, 2, 16, 16]);
}

#[test]
fn transpose_gradients_match_finite_differences() {
    let mut r = rng(3);
    let x = Tensor4::randn([2, 3, 3, 3], 1.0, &mut r);
    let k = Tensor4::randn([3, 2, 4, 4], 1.0, &mut r);
    let err = gradcheck(&[x, k], |_, v| v[0].conv2d_transpose(v[1], 2, 1));
    assert!(err < 1e-4, "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_and_transpose_are_adjoint(
        seed in 0u64..10_000,
        c_in in 1usize..4,
        c_out in 1usize..4,
        k in 1usize..5,
        stride in 1usize..3,
        pad in 0usize..2,
        h in 5usize..10,
        w in 5usize..10,
    ) {
        let mut r = rng(seed);
        let x = Tensor4::<f64>::randn([2, c_in, h, w], 1.0, &mut r);
        let kernel = Tensor4::randn([c_out, c_in, k, k], 1.0, &mut r);
        let y_shape = conv2d(&x, &kernel, stride, pad).unwrap().shape();
        let y = Tensor4::randn(y_shape, 1.0, &mut r);
        // conv2d_transpose(y) lands on the input grid only when the stride
        // tiles it exactly; compare against the reverse-mode adjoint instead,
        // and against conv2d_transpose whenever the sizes agree.
        let lhs = conv2d(&x, &kernel, stride, pad).unwrap().dot(&y);
        let (dx, _) = ops::conv2d_backward(&x, &kernel, &y, stride, pad, true, false).unwrap();
        let rhs = x.dot(&dx.unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-8 * (1.0 + lhs.abs()));
        // A conv weight (out, in, kh, kw) is read by the transposed op as
        // (in', out') with in' = out, which is exactly the adjoint.
        if let Ok(t) = conv2d_transpose(&y, &kernel, stride, pad) {
            if t.shape() == x.shape() {
                let rhs2 = x.dot(&t);
                prop_assert!((lhs - rhs2).abs() <= 1e-8 * (1.0 + lhs.abs()));
            }
        }
    }
}

#[test]
fn resnet_block_zero_residual_is_identity() {
    let mut r = rng(4);
    let mut p = ParamSet::<f64>::new();
    init_resnet_block(&mut p, "rb", 8, &mut r);
    for name in ["rb.conv1.w", "rb.conv2.w"] {
        p.get_mut(name).unwrap().data_mut().fill(0.0);
    }
    let x = Tensor4::randn([1, 8, 16, 16], 1.0, &mut r);
    let tape = Tape::new();
    let b = p.bind(&tape, false);
    let y = resnet_block(tape.constant(x.clone()), &b, "rb").unwrap();
    assert_eq!(y.shape(), [1, 8, 16, 16]);
    assert_eq!(*y.value(), x);
}

#[test]
fn resnet_block_channel_mismatch() {
    let mut r = rng(5);
    let mut p = ParamSet::<f64>::new();
    init_resnet_block(&mut p, "rb", 4, &mut r);
    let tape = Tape::new();
    let b = p.bind(&tape, false);
    let x = tape.constant(Tensor4::zeros([1, 3, 8, 8]));
    assert!(matches!(resnet_block(x, &b, "rb"), Err(Error::Shape { dim: "channels", .. })));
}

#[test]
fn resnet_block_gradients() {
    let mut r = rng(6);
    let x = Tensor4::randn([2, 3, 6, 6], 1.0, &mut r);
    let w1 = Tensor4::randn([3, 3, 3, 3], 0.5, &mut r);
    let w2 = Tensor4::randn([3, 3, 3, 3], 0.5, &mut r);
    let err = gradcheck(&[x, w1, w2], |tape, v| {
        let mut p = ParamSet::new();
        p.insert("rb.conv1.w", (*v[1].value()).clone());
        p.insert("rb.conv2.w", (*v[2].value()).clone());
        // Bind through the supplied vars so gradients flow to them.
        let h = v[0].conv2d(v[1], 1, 1)?.instance_norm(layers::NORM_EPS).relu();
        let h = h.conv2d(v[2], 1, 1)?.instance_norm(layers::NORM_EPS);
        let direct = v[0].add(h)?;
        let via_block = resnet_block(v[0], &p.bind(tape, false), "rb")?;
        assert_eq!(*direct.value(), *via_block.value());
        Ok(direct)
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn elementwise_gradients() {
    let mut r = rng(7);
    let x = Tensor4::randn([2, 3, 4, 4], 1.0, &mut r);
    let y = Tensor4::randn([2, 3, 4, 4], 1.0, &mut r);
    let b = Tensor4::randn([1, 3, 1, 1], 1.0, &mut r);
    let checks: Vec<(&str, f64)> = vec![
        ("sigmoid", gradcheck(&[x.clone()], |_, v| Ok(v[0].sigmoid()))),
        ("tanh", gradcheck(&[x.clone()], |_, v| Ok(v[0].tanh()))),
        ("relu", gradcheck(&[x.clone()], |_, v| Ok(v[0].relu()))),
        ("leaky", gradcheck(&[x.clone()], |_, v| Ok(v[0].leaky_relu(0.2)))),
        ("softmax", gradcheck(&[x.clone()], |_, v| Ok(v[0].softmax_channel()))),
        ("inorm", gradcheck(&[x.clone()], |_, v| Ok(v[0].instance_norm(1e-5)))),
        ("abs", gradcheck(&[x.clone()], |_, v| Ok(v[0].abs()))),
        ("square", gradcheck(&[x.clone()], |_, v| Ok(v[0].square()))),
        ("mul", gradcheck(&[x.clone(), y.clone()], |_, v| v[0].mul(v[1]))),
        ("sub", gradcheck(&[x.clone(), y.clone()], |_, v| v[0].sub(v[1]))),
        ("concat", gradcheck(&[x.clone(), y.clone()], |_, v| v[0].concat_channels(v[1]))),
        ("bias", gradcheck(&[x.clone(), b], |_, v| v[0].add_bias(v[1]))),
        ("mean", gradcheck(&[x.clone()], |_, v| Ok(v[0].mean()))),
        ("mse", gradcheck(&[x.clone()], |_, v| Ok(v[0].mse_const(0.3)))),
        ("bce", gradcheck(&[x.clone()], |_, v| Ok(v[0].bce_logits_const(1.0)))),
    ];
    for (name, err) in checks {
        let tol = if name == "sigmoid" { 1e-6 } else { 1e-4 };
        assert!(err < tol, "{name}: {err}");
    }
}

#[test]
fn activation_values() {
    let x = Tensor4::from_vec([1, 1, 1, 2], vec![-1.0f64, 2.0]).unwrap();
    assert_eq!(ops::relu(&x).data(), &[0.0, 2.0]);
    let eq = Tensor4::from_vec([1, 2, 1, 1], vec![0.7f64, 0.7]).unwrap();
    assert_eq!(ops::softmax_channel(&eq).data(), &[0.5, 0.5]);
    assert_eq!(ops::leaky_relu(&x, 0.2).data(), &[-0.2, 2.0]);
}

#[test]
fn forward_is_deterministic() {
    let mut r = rng(8);
    let x = Tensor4::<f32>::randn([2, 3, 17, 13], 1.0, &mut r);
    let k = Tensor4::randn([5, 3, 3, 3], 1.0, &mut r);
    assert_eq!(conv2d(&x, &k, 2, 1).unwrap(), conv2d(&x, &k, 2, 1).unwrap());
}

fn scalar_params(v: f64) -> ParamSet<f64> {
    let mut p = ParamSet::new();
    p.insert("w", Tensor4::scalar(v));
    p
}

fn grad_of(v: f64) -> GradMap<f64> {
    [("w".to_string(), Tensor4::scalar(v))].into_iter().collect()
}

#[test]
fn adam_zero_gradient_is_fixed_point() {
    let mut p = scalar_params(1.5);
    let cfg = AdamConfig::default();
    p.adam_step(&grad_of(2.0), &cfg).unwrap();
    let w = p.get("w").unwrap().data()[0];
    let m_before = p.moment("w").unwrap().first.data()[0];
    p.adam_step(&grad_of(0.0), &cfg).unwrap();
    let m_after = p.moment("w").unwrap().first.data()[0];
    assert!((m_after - cfg.beta1 * m_before).abs() < 1e-15);
    // From a fresh state a zero gradient leaves the parameter untouched.
    let mut fresh = scalar_params(1.5);
    fresh.adam_step(&grad_of(0.0), &cfg).unwrap();
    assert_eq!(fresh.get("w").unwrap().data()[0], 1.5);
    assert_eq!(fresh.step(), 1);
    assert!(w != 1.5);
}

#[test]
fn adam_first_step_moves_by_lr() {
    // m1 = (1-b1) g, v1 = (1-b2) g²; after bias correction mhat = g,
    // vhat = g², so the step is lr·g/(|g| + eps).
    for g in [3.0, -0.25] {
        let cfg = AdamConfig {
            lr: 0.01,
            ..Default::default()
        };
        let mut p = scalar_params(0.0);
        p.adam_step(&grad_of(g), &cfg).unwrap();
        let expected = -cfg.lr * g / (g.abs() + cfg.epsilon);
        let got = p.get("w").unwrap().data()[0];
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((got + cfg.lr * g.signum()).abs() < 1e-8);
    }
}

#[test]
fn adam_decreases_quadratic() {
    let loss = |w: f64| (w - 2.0) * (w - 2.0);
    let mut p = scalar_params(-1.0);
    let cfg = AdamConfig {
        lr: 0.1,
        ..Default::default()
    };
    let mut prev = loss(-1.0);
    for _ in 0..2 {
        let w = p.get("w").unwrap().data()[0];
        p.adam_step(&grad_of(2.0 * (w - 2.0)), &cfg).unwrap();
        let now = loss(p.get("w").unwrap().data()[0]);
        assert!(now < prev);
        prev = now;
    }
    assert_eq!(p.step(), 2);
}

#[test]
fn adam_missing_gradient() {
    let mut p = scalar_params(0.0);
    p.insert("v", Tensor4::scalar(1.0));
    let err = p.adam_step(&grad_of(1.0), &AdamConfig::default()).unwrap_err();
    assert!(matches!(err, Error::MissingGradient(ref n) if n == "v"));
}
