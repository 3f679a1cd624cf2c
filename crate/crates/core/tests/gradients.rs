//! Finite-difference oracle suite: every differentiable op is checked
//! against central differences on randomized inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scatterpos_core::autodiff::{grad_check, Activation, Tape, Tensor};

const EPS: f64 = 1e-5;

fn random_values(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Values bounded away from zero, for ops with a kink at the origin.
fn random_values_off_origin(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.random_range(0.1..2.0)
        })
        .collect()
}

#[test]
fn linear_function_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let values = random_values(&mut rng, 12, -2.0, 2.0);
    let err = grad_check(
        |tape, x| {
            let y = tape.scale(x, 3.25)?;
            tape.sum(&y)
        },
        &[3, 4],
        &values,
        EPS,
    )
    .unwrap();
    assert!(err < 1e-9, "linear grad err {err}");
}

#[test]
fn matmul_gradient_wrt_both_sides() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let a_vals = random_values(&mut rng, 3 * 4, -1.0, 1.0);
        let b_vals = random_values(&mut rng, 4 * 2, -1.0, 1.0);
        let b_const = Tensor::new(&[4, 2], b_vals.clone()).unwrap();
        let err = grad_check(
            |tape, a| {
                let c = tape.matmul(a, &b_const)?;
                tape.sum(&c)
            },
            &[3, 4],
            &a_vals,
            EPS,
        )
        .unwrap();
        assert!(err < 1e-6, "dA err {err}");

        let a_const = Tensor::new(&[3, 4], a_vals).unwrap();
        let err = grad_check(
            |tape, b| {
                let c = tape.matmul(&a_const, b)?;
                tape.sum(&c)
            },
            &[4, 2],
            &b_vals,
            EPS,
        )
        .unwrap();
        assert!(err < 1e-6, "dB err {err}");
    }
}

/// Naive triple-loop convolution used as the forward oracle.
fn conv_oracle(
    x: &[f64],
    w: &[f64],
    bias: &[f64],
    batch: usize,
    c_in: usize,
    len: usize,
    c_out: usize,
    ksize: usize,
    stride: usize,
) -> Vec<f64> {
    let out_len = (len - ksize) / stride + 1;
    let mut out = vec![0.0; batch * c_out * out_len];
    for b in 0..batch {
        for o in 0..c_out {
            for j in 0..out_len {
                let mut acc = bias[o];
                for c in 0..c_in {
                    for q in 0..ksize {
                        acc += x[b * c_in * len + c * len + j * stride + q]
                            * w[o * c_in * ksize + c * ksize + q];
                    }
                }
                out[b * c_out * out_len + o * out_len + j] = acc;
            }
        }
    }
    out
}

#[test]
fn conv_forward_matches_triple_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let batch = rng.random_range(1..4);
        let c_in = rng.random_range(1..4);
        let c_out = rng.random_range(1..5);
        let ksize = rng.random_range(1..6);
        let stride = rng.random_range(1..4);
        let len = ksize + rng.random_range(0..12);
        let x = random_values(&mut rng, batch * c_in * len, -1.0, 1.0);
        let w = random_values(&mut rng, c_out * c_in * ksize, -1.0, 1.0);
        let b = random_values(&mut rng, c_out, -1.0, 1.0);
        let tape = Tape::new();
        let xt = Tensor::new(&[batch, c_in, len], x.clone()).unwrap();
        let wt = Tensor::new(&[c_out, c_in, ksize], w.clone()).unwrap();
        let bt = Tensor::new(&[c_out], b.clone()).unwrap();
        let y = tape.conv1d(&xt, &wt, Some(&bt), stride).unwrap();
        let oracle = conv_oracle(&x, &w, &b, batch, c_in, len, c_out, ksize, stride);
        for (a, o) in y.values().iter().zip(oracle.iter()) {
            assert!((a - o).abs() < 1e-12, "{a} vs {o}");
        }
    }
}

#[test]
fn conv_gradients_wrt_input_kernel_and_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (batch, c_in, len, c_out, ksize, stride) = (2, 2, 11, 3, 3, 2);
    let x = random_values(&mut rng, batch * c_in * len, -1.0, 1.0);
    let w = random_values(&mut rng, c_out * c_in * ksize, -1.0, 1.0);
    let b = random_values(&mut rng, c_out, -0.5, 0.5);

    let w_const = Tensor::new(&[c_out, c_in, ksize], w.clone()).unwrap();
    let b_const = Tensor::new(&[c_out], b.clone()).unwrap();
    let err = grad_check(
        |tape, xt| {
            let y = tape.conv1d(xt, &w_const, Some(&b_const), stride)?;
            let s = tape.sigmoid(&y)?;
            tape.sum(&s)
        },
        &[batch, c_in, len],
        &x,
        EPS,
    )
    .unwrap();
    assert!(err < 1e-6, "conv dx err {err}");

    let x_const = Tensor::new(&[batch, c_in, len], x.clone()).unwrap();
    let err = grad_check(
        |tape, wt| {
            let y = tape.conv1d(&x_const, wt, Some(&b_const), stride)?;
            let s = tape.sigmoid(&y)?;
            tape.sum(&s)
        },
        &[c_out, c_in, ksize],
        &w,
        EPS,
    )
    .unwrap();
    assert!(err < 1e-6, "conv dw err {err}");

    let err = grad_check(
        |tape, bt| {
            let y = tape.conv1d(&x_const, &w_const, Some(bt), stride)?;
            let s = tape.sigmoid(&y)?;
            tape.sum(&s)
        },
        &[c_out],
        &b,
        EPS,
    )
    .unwrap();
    assert!(err < 1e-6, "conv db err {err}");
}

#[test]
fn activation_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for act in [Activation::Sigmoid, Activation::Selu] {
        let values = random_values(&mut rng, 24, -2.0, 2.0);
        let err = grad_check(
            |tape, x| {
                let y = tape.activation(x, act)?;
                tape.sum(&y)
            },
            &[4, 6],
            &values,
            EPS,
        )
        .unwrap();
        assert!(err < 1e-6, "{} grad err {err}", act.name());
    }
    // Kinked activations, sampled away from the origin.
    for act in [Activation::Relu, Activation::LeakyRelu, Activation::Selu] {
        let values = random_values_off_origin(&mut rng, 24);
        let err = grad_check(
            |tape, x| {
                let y = tape.activation(x, act)?;
                tape.sum(&y)
            },
            &[4, 6],
            &values,
            EPS,
        )
        .unwrap();
        assert!(err < 1e-6, "{} grad err {err}", act.name());
    }
}

#[test]
fn sigmoid_chain_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let w1 = Tensor::new(&[5, 4], random_values(&mut rng, 20, -0.7, 0.7)).unwrap();
    let w2 = Tensor::new(&[4, 1], random_values(&mut rng, 4, -0.7, 0.7)).unwrap();
    let x = random_values(&mut rng, 3 * 5, -1.0, 1.0);
    let err = grad_check(
        |tape, xt| {
            let h = tape.matmul(xt, &w1)?;
            let h = tape.sigmoid(&h)?;
            let h = tape.matmul(&h, &w2)?;
            let h = tape.sigmoid(&h)?;
            tape.sum(&h)
        },
        &[3, 5],
        &x,
        EPS,
    )
    .unwrap();
    assert!(err < 1e-6, "sigmoid chain err {err}");
}

#[test]
fn conv_stack_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w1 = Tensor::new(&[3, 1, 5], random_values(&mut rng, 15, -0.6, 0.6)).unwrap();
    let w2 = Tensor::new(&[2, 3, 3], random_values(&mut rng, 18, -0.6, 0.6)).unwrap();
    let x = random_values(&mut rng, 26, -1.0, 1.0);
    let err = grad_check(
        |tape, xt| {
            let h = tape.conv1d(xt, &w1, None, 2)?;
            let h = tape.sigmoid(&h)?;
            let h = tape.conv1d(&h, &w2, None, 2)?;
            let h = tape.sigmoid(&h)?;
            tape.sum(&h)
        },
        &[1, 1, 26],
        &x,
        EPS,
    )
    .unwrap();
    assert!(err < 1e-5, "conv stack err {err}");
}

#[test]
fn batchnorm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let gamma = Tensor::new(&[3], random_values(&mut rng, 3, 0.5, 1.5)).unwrap();
    let beta = Tensor::new(&[3], random_values(&mut rng, 3, -0.5, 0.5)).unwrap();
    let x = random_values(&mut rng, 6 * 3, -2.0, 2.0);
    let err = grad_check(
        |tape, xt| {
            let (y, _, _) = tape.batchnorm_train(xt, &gamma, &beta, 1e-5)?;
            let s = tape.sigmoid(&y)?;
            tape.sum(&s)
        },
        &[6, 3],
        &x,
        EPS,
    )
    .unwrap();
    assert!(err < 1e-5, "bn dx err {err}");

    let x_const = Tensor::new(&[6, 3], x.clone()).unwrap();
    let beta_c = Tensor::new(&[3], beta.values()).unwrap();
    let err = grad_check(
        |tape, g| {
            let (y, _, _) = tape.batchnorm_train(&x_const, g, &beta_c, 1e-5)?;
            let s = tape.sigmoid(&y)?;
            tape.sum(&s)
        },
        &[3],
        &gamma.values(),
        EPS,
    )
    .unwrap();
    assert!(err < 1e-6, "bn dgamma err {err}");

    // Channel form over [batch, chan, len].
    let gamma3 = Tensor::new(&[2], vec![1.1, 0.9]).unwrap();
    let beta3 = Tensor::new(&[2], vec![0.1, -0.2]).unwrap();
    let x3 = random_values(&mut rng, 4 * 2 * 5, -2.0, 2.0);
    let err = grad_check(
        |tape, xt| {
            let (y, _, _) = tape.batchnorm_train(xt, &gamma3, &beta3, 1e-5)?;
            let s = tape.sigmoid(&y)?;
            tape.sum(&s)
        },
        &[4, 2, 5],
        &x3,
        EPS,
    )
    .unwrap();
    assert!(err < 1e-5, "bn rank-3 dx err {err}");
}

#[test]
fn mse_gradient_matches_definition_and_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pred = random_values(&mut rng, 8, -1.0, 1.0);
    let target_vals = random_values(&mut rng, 8, -1.0, 1.0);
    let target = Tensor::new(&[8, 1], target_vals.clone()).unwrap();

    // Analytic formula: d = 2 (p - t) / n.
    let tape = Tape::new();
    let p = Tensor::param(&[8, 1], pred.clone()).unwrap();
    let loss = tape.mse_loss(&p, &target).unwrap();
    tape.backward(&loss).unwrap();
    let grad = p.grad().unwrap();
    for i in 0..8 {
        let expect = 2.0 * (pred[i] - target_vals[i]) / 8.0;
        assert!((grad[i] - expect).abs() < 1e-12);
    }

    let err = grad_check(
        |tape, p| tape.mse_loss(p, &target),
        &[8, 1],
        &pred,
        EPS,
    )
    .unwrap();
    assert!(err < 1e-6, "mse grad err {err}");
}

#[test]
fn bias_broadcast_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x_const = Tensor::new(&[4, 3], random_values(&mut rng, 12, -1.0, 1.0)).unwrap();
    let bias = random_values(&mut rng, 3, -1.0, 1.0);
    let err = grad_check(
        |tape, b| {
            let y = tape.add_bias(&x_const, b)?;
            let s = tape.sigmoid(&y)?;
            tape.sum(&s)
        },
        &[3],
        &bias,
        EPS,
    )
    .unwrap();
    assert!(err < 1e-6, "bias err {err}");
}
