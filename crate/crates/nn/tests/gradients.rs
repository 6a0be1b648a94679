//! Finite-difference and naive-loop oracles for every layer.

use drivestyle_nn::{
    check_layer, cross_entropy, relative_error, AdaptiveMaxPool1d, Attention, BatchNorm1d, Conv1d, Dense, Dropout,
    Layer, Mode, Relu, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn dense_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut layer = Dense::new("d", 6, 4, &mut rng);
    layer.bias.value = random(&[4], &mut rng);
    let x = random(&[3, 6], &mut rng);
    let r = check_layer(&mut layer, &x, H, Mode::Train).unwrap();
    assert!(r.max_rel_err <= 1e-6, "{r:?}");
    assert_eq!(r.checked, 18 + 24 + 4);
}

#[test]
fn conv1d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for k in [1, 3, 5, 7] {
        let mut layer = Conv1d::new("c", 2, 3, k, true, &mut rng).unwrap();
        let x = random(&[2, 2, 6], &mut rng);
        let r = check_layer(&mut layer, &x, H, Mode::Train).unwrap();
        assert!(r.max_rel_err <= 1e-6, "k={k}: {r:?}");
    }
}

#[test]
fn batchnorm_gradients_train_and_eval() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut layer = BatchNorm1d::new("bn", 3, &mut rng);
    layer.gamma.value = random(&[3], &mut rng);
    layer.beta.value = random(&[3], &mut rng);
    let x = random(&[4, 3, 5], &mut rng);
    let r = check_layer(&mut layer, &x, H, Mode::Train).unwrap();
    assert!(r.max_rel_err <= 1e-5, "{r:?}");
    let r = check_layer(&mut layer, &x, H, Mode::Eval).unwrap();
    assert!(r.max_rel_err <= 1e-5, "{r:?}");
}

#[test]
fn attention_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut layer = Attention::new("att", 5, 4, &mut rng);
    let x = random(&[2, 6, 5], &mut rng);
    let r = check_layer(&mut layer, &x, H, Mode::Train).unwrap();
    assert!(r.max_rel_err <= 1e-5, "{r:?}");
}

#[test]
fn relu_and_pool_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let x = random(&[2, 3, 7], &mut rng);
    let r = check_layer(&mut Relu::new(), &x, H, Mode::Train).unwrap();
    assert!(r.max_rel_err <= 1e-6, "{r:?}");
    for out in [1, 2, 3, 7] {
        let r = check_layer(&mut AdaptiveMaxPool1d::new(out), &x, H, Mode::Train).unwrap();
        assert!(r.max_rel_err <= 1e-6, "out={out}: {r:?}");
    }
}

#[test]
fn dropout_gradient_uses_the_forward_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = random(&[4, 8], &mut rng);
    let mut d = Dropout::new(0.3, 77).unwrap();
    let y = d.forward(&x, Mode::Train).unwrap();
    let g = d.backward(&Tensor::filled(&[4, 8], 1.0)).unwrap();
    for ((yv, xv), gv) in y.data().iter().zip(x.data()).zip(g.data()) {
        assert_eq!(*yv, xv * gv);
    }
}

#[test]
fn cross_entropy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let logits = random(&[5, 4], &mut rng);
    let labels = [0, 3, 2, 1, 3];
    let (_, grad) = cross_entropy(&logits, &labels).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..logits.len() {
        let mut p = logits.clone();
        p.data_mut()[i] += H;
        let mut m = logits.clone();
        m.data_mut()[i] -= H;
        let num = (cross_entropy(&p, &labels).unwrap().0 - cross_entropy(&m, &labels).unwrap().0) / (2.0 * H);
        worst = worst.max(relative_error(grad.data()[i], num));
    }
    assert!(worst <= 1e-7, "{worst}");
}

fn naive_conv(x: &Tensor, w: &Tensor, bias: &[f64]) -> Vec<f64> {
    let (b, cin, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let pad = (k - 1) / 2;
    let mut out = vec![0.0; b * cout * len];
    for bi in 0..b {
        for o in 0..cout {
            for l in 0..len {
                let mut acc = bias[o];
                for c in 0..cin {
                    for t in 0..k {
                        let pos = l as isize + t as isize - pad as isize;
                        if pos >= 0 && (pos as usize) < len {
                            acc += w.data()[(o * cin + c) * k + t] * x.data()[(bi * cin + c) * len + pos as usize];
                        }
                    }
                }
                out[(bi * cout + o) * len + l] = acc;
            }
        }
    }
    out
}

#[test]
fn conv1d_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for k in [3, 5, 7] {
        let mut conv = Conv1d::new("c", 3, 4, k, true, &mut rng).unwrap();
        conv.bias.as_mut().unwrap().value = random(&[4], &mut rng);
        let x = random(&[2, 3, 11], &mut rng);
        let y = conv.forward(&x, Mode::Eval).unwrap();
        let want = naive_conv(&x, &conv.weight.value, conv.bias.as_ref().unwrap().value.data());
        for (a, b) in y.data().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-10);
        }
    }
}

#[test]
fn pool_matches_naive_bins() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let x = random(&[3, 2, 10], &mut rng);
    for out in 1..=10 {
        let y = AdaptiveMaxPool1d::new(out).forward(&x, Mode::Eval).unwrap();
        for row in 0..6 {
            for i in 0..out {
                let start = (i as f64 * 10.0 / out as f64).floor() as usize;
                let end = ((i + 1) as f64 * 10.0 / out as f64).ceil() as usize;
                let m = x.data()[row * 10 + start..row * 10 + end]
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(y.data()[row * out + i], m);
            }
        }
    }
}

#[test]
fn eval_forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut bn = BatchNorm1d::new("bn", 2, &mut rng);
    let mut drop = Dropout::new(0.5, 3).unwrap();
    let x = random(&[2, 2, 4], &mut rng);
    let a = drop.forward(&bn.forward(&x, Mode::Eval).unwrap(), Mode::Eval).unwrap();
    let b = drop.forward(&bn.forward(&x, Mode::Eval).unwrap(), Mode::Eval).unwrap();
    assert_eq!(a, b);
}
