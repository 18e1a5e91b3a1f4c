use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn dense_hand_affine() {
    let mut tape = Tape::new();
    let x = tape.leaf(t64(&[1, 1, 2], &[1.0, 2.0]), false);
    let w = tape.leaf(t64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), false);
    let b = tape.leaf(t64(&[2], &[1.0, 1.0]), false);
    let y = tape.dense(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[2.0, 3.0]);

    let w0 = tape.leaf(Tensor::zeros(&[2, 3]), false);
    let b0 = tape.leaf(t64(&[3], &[0.5, -1.0, 4.0]), false);
    let y0 = tape.dense(x, w0, b0).unwrap();
    assert_eq!(tape.value(y0).data(), &[0.5, -1.0, 4.0]);

    let bad = tape.leaf(Tensor::zeros(&[3, 3]), false);
    assert!(tape.dense(x, bad, b0).is_err());
}

#[test]
fn conv2d_hand_cross_correlation() {
    let mut tape = Tape::new();
    let x = tape.leaf(t64(&[1, 1, 4, 1], &[1.0, 2.0, 3.0, 4.0]), false);
    let w = tape.leaf(t64(&[1, 3, 1, 1], &[1.0, 0.0, -1.0]), false);
    let b = tape.leaf(t64(&[1], &[0.0]), false);
    let y = tape.conv2d_same(x, w, b).unwrap();
    assert_eq!(tape.shape(y), &[1, 1, 4, 1]);
    assert_eq!(tape.value(y).data(), &[-2.0, -2.0, -2.0, 3.0]);

    let v = tape.leaf(t64(&[1, 1, 1, 1], &[1.5]), false);
    let wv = tape.leaf(t64(&[1, 1, 1, 1], &[-2.0]), false);
    let yv = tape.conv2d_same(v, wv, b).unwrap();
    assert_eq!(tape.value(yv).data(), &[-3.0]);
}

#[test]
fn maxpool_forward_and_tie_rule() {
    let mut tape = Tape::new();
    let x = tape.leaf(t64(&[1, 1, 4, 1], &[1.0, 5.0, 3.0, 2.0]), true);
    let y = tape.maxpool2d(x, (1, 2)).unwrap();
    assert_eq!(tape.value(y).data(), &[5.0, 3.0]);

    let z = tape.leaf(t64(&[1, 1, 2, 1], &[7.0, 7.0]), true);
    let p = tape.maxpool2d(z, (1, 2)).unwrap();
    let l = tape.weighted_sum(p, vec![1.0]).unwrap();
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(z).unwrap(), &[1.0, 0.0]);

    let short = tape.leaf(Tensor::zeros(&[1, 1, 1, 3]), false);
    assert!(tape.maxpool2d(short, (1, 2)).is_err());
}

#[test]
fn upsample_identity_and_repeat() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tape = Tape::new();
    let x = tape.leaf(random(&[2, 3, 4, 5], &mut rng), true);
    let y = tape.upsample2d(x, (1, 1)).unwrap();
    assert_eq!(tape.value(y), tape.value(x));
    let l = tape.weighted_sum(y, vec![0.5; 120]).unwrap();
    assert!(tape.backward(l).unwrap().get(x).unwrap().iter().all(|&g| g == 0.5));

    let mut tape = Tape::new();
    let x = tape.leaf(t64(&[1, 1, 2, 1], &[3.0, 8.0]), true);
    let y = tape.upsample2d(x, (1, 2)).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 3.0, 8.0, 8.0]);
    let l = tape.weighted_sum(y, vec![1.0; 4]).unwrap();
    assert_eq!(tape.backward(l).unwrap().get(x).unwrap(), &[2.0, 2.0]);
    assert!(tape.upsample2d(x, (0, 1)).is_err());
}

#[test]
fn mse_values() {
    let mut tape = Tape::new();
    let p = tape.leaf(t64(&[2], &[0.0, 0.0]), true);
    let t = tape.leaf(t64(&[2], &[3.0, 4.0]), false);
    let l = tape.mse(p, t).unwrap();
    assert_eq!(tape.value(l).data(), &[12.5]);
    assert_eq!(tape.backward(l).unwrap().get(p).unwrap(), &[-3.0, -4.0]);
    let same = tape.mse(t, t).unwrap();
    assert_eq!(tape.value(same).data(), &[0.0]);
    let odd = tape.leaf(t64(&[3], &[0.0; 3]), false);
    assert!(tape.mse(p, odd).is_err());
}

fn tcn_spec(filters: usize, kernel: usize, dilations: Vec<usize>) -> Vec<LayerSpec> {
    vec![LayerSpec::Tcn {
        filters,
        kernel,
        dilations,
    }]
}

#[test]
fn tcn_shapes_and_zero_dilation() {
    let net = Network::build(&tcn_spec(128, 3, vec![1, 2]), &[30], 0).unwrap();
    let x = Tensor::new(&[2, 5, 30], vec![0.1; 300]).unwrap();
    assert_eq!(net.predict(&x).unwrap().shape(), &[2, 5, 128]);
    assert!(Network::build(&tcn_spec(8, 3, vec![1, 0]), &[3], 0).is_err());
}

#[test]
fn tcn_block_hand_projection() {
    // kernel 1, zero conv weights: the block reduces to its 1x1 projection
    let mut net = Network::build(&tcn_spec(2, 1, vec![1]), &[3], 0).unwrap();
    for p in &mut net.params {
        p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let proj = net.params.iter_mut().find(|p| p.name.ends_with("proj.w")).unwrap();
    // rows: input channels, cols: filters
    proj.value.data_mut().copy_from_slice(&[1.0, 2.0, 0.0, -1.0, 3.0, 0.5]);
    let x = Tensor::new(&[1, 1, 3], vec![2.0, 1.0, 4.0]).unwrap();
    // [2,1,4] * [[1,2],[0,-1],[3,0.5]] = [2+0+12, 4-1+2]
    assert_eq!(net.predict(&x).unwrap().data(), &[14.0, 5.0]);
}

#[test]
fn tcn_block_identity_weights() {
    // kernel 1, identity convs, identity projection not needed (C == F):
    // non-negative input passes both ReLUs, residual doubles it
    let mut net = Network::build(&tcn_spec(2, 1, vec![1]), &[2], 0).unwrap();
    for p in &mut net.params {
        let d = p.value.data_mut();
        d.iter_mut().for_each(|v| *v = 0.0);
        if p.name.ends_with(".w") {
            d[0] = 1.0;
            d[3] = 1.0;
        }
    }
    let x = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 0.5, 3.0]).unwrap();
    assert_eq!(net.predict(&x).unwrap().data(), &[2.0, 4.0, 1.0, 6.0]);
}

#[test]
fn tcn_is_causal() {
    let net = Network::build(&tcn_spec(8, 3, vec![1, 2]), &[4], 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Tensor<f32> = random(&[1, 10, 4], &mut rng).cast();
    let base = net.predict(&x).unwrap();
    for t in 0..10 {
        let mut y = x.clone();
        for c in 0..4 {
            y.data_mut()[t * 4 + c] += 10.0;
        }
        let out = net.predict(&y).unwrap();
        assert_eq!(&out.data()[..t * 8], &base.data()[..t * 8], "t={t}");
        assert_ne!(&out.data()[t * 8..], &base.data()[t * 8..]);
    }
}

#[test]
fn conv_transpose_is_dense_over_channels() {
    let spec_t = vec![LayerSpec::Conv2dTranspose {
        filters: 6,
        kernel: (1, 1),
        stride: (1, 1),
        activation: Activation::Linear,
    }];
    let spec_d = vec![LayerSpec::DenseTd {
        units: 6,
        activation: Activation::Linear,
    }];
    let net_t = Network::build(&spec_t, &[3, 5], 9).unwrap();
    let mut net_d = Network::build(&spec_d, &[3, 5], 1).unwrap();
    for (d, t) in net_d.params.iter_mut().zip(&net_t.params) {
        d.value = t.value.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x: Tensor<f32> = random(&[2, 4, 3, 5], &mut rng).cast();
    let a = net_t.predict(&x).unwrap();
    let b = net_d.predict(&x).unwrap();
    assert_eq!(a.shape(), &[2, 4, 3, 6]);
    for (p, q) in a.data().iter().zip(b.data()) {
        assert!((p - q).abs() <= 1e-6);
    }
    let bad = vec![LayerSpec::Conv2dTranspose {
        filters: 6,
        kernel: (3, 3),
        stride: (1, 1),
        activation: Activation::Relu,
    }];
    assert!(Network::build(&bad, &[3, 5], 0).is_err());
}

#[test]
fn conv_transpose_identity_passes_nonnegative_input() {
    let spec = vec![LayerSpec::Conv2dTranspose {
        filters: 3,
        kernel: (1, 1),
        stride: (1, 1),
        activation: Activation::Relu,
    }];
    let mut net = Network::build(&spec, &[2, 3], 0).unwrap();
    let w = net.params[0].value.data_mut();
    w.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..3 {
        w[i * 3 + i] = 1.0;
    }
    let x = Tensor::new(&[1, 1, 2, 3], vec![0.0, 1.0, 2.0, 3.5, 0.25, 9.0]).unwrap();
    assert_eq!(net.predict(&x).unwrap(), x);
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let x = random(&[2, 3, 4], &mut rng);
    let w = random(&[4, 5], &mut rng);
    let b = random(&[5], &mut rng);
    let err = grad_check(&[x, w, b], |t, v| t.dense(v[0], v[1], v[2]), 1).unwrap();
    assert!(err < 1e-4, "dense {err}");

    let x = random(&[1, 6, 3], &mut rng);
    let w = random(&[3, 3, 4], &mut rng);
    let b = random(&[4], &mut rng);
    let err = grad_check(&[x, w, b], |t, v| t.causal_conv1d(v[0], v[1], v[2], 2), 2).unwrap();
    assert!(err < 1e-4, "causal conv {err}");

    let x = random(&[1, 2, 5, 3], &mut rng);
    let w = random(&[1, 3, 3, 2], &mut rng);
    let b = random(&[2], &mut rng);
    let err = grad_check(&[x, w, b], |t, v| t.conv2d_same(v[0], v[1], v[2]), 3).unwrap();
    assert!(err < 1e-4, "conv2d {err}");
}

#[test]
fn relu_gradient_away_from_kink() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data: Vec<f64> = (0..24)
        .map(|_| {
            let v: f64 = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    let x = t64(&[2, 3, 4], &data);
    let err = grad_check(&[x], |t, v| Ok(t.relu(v[0])), 4).unwrap();
    assert!(err < 1e-6, "relu {err}");
}

#[test]
fn predict_rejects_wrong_input() {
    let net = Network::build(&tcn_spec(4, 3, vec![1]), &[3], 0).unwrap();
    assert!(net.predict(&Tensor::zeros(&[1, 2, 5])).is_err());
}

#[test]
fn checkpoint_roundtrip() {
    let net = Network::build(&tcn_spec(4, 3, vec![1, 2]), &[3], 7).unwrap();
    let meta = serde_json::json!({"architecture": "test", "seed": 7});
    let ck = Checkpoint::from_params(&net.params, meta);
    let bytes = ck.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    let mut bad = bytes.clone();
    bad[1] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(crate::Error::Format { .. })));
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
}
