use drivestyle_nn::linalg::{gemm_acc, transpose};
use drivestyle_nn::{cross_entropy, softmax_rows, Tensor};
use proptest::prelude::*;

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1..max_rows, 1..max_cols).prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-50.0..50.0f64, r * c)))
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions((b, k, data) in matrix(8, 10)) {
        let p = softmax_rows(&Tensor::from_vec(&[b, k], data).unwrap()).unwrap();
        for row in p.data().chunks_exact(k) {
            prop_assert!(row.iter().all(|&v| v > 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_is_shift_invariant((b, k, data) in matrix(6, 8), shift in -100.0..100.0f64) {
        let x = Tensor::from_vec(&[b, k], data.clone()).unwrap();
        let y = Tensor::from_vec(&[b, k], data.iter().map(|v| v + shift).collect()).unwrap();
        let (px, py) = (softmax_rows(&x).unwrap(), softmax_rows(&y).unwrap());
        for (a, c) in px.data().iter().zip(py.data()) {
            prop_assert!((a - c).abs() <= 1e-9);
        }
    }

    #[test]
    fn cross_entropy_gradient_rows_sum_to_zero((b, k, data) in matrix(6, 6), seed in any::<u64>()) {
        let labels: Vec<usize> = (0..b).map(|i| (seed as usize).wrapping_add(i * 7) % k).collect();
        let (loss, grad) = cross_entropy(&Tensor::from_vec(&[b, k], data).unwrap(), &labels).unwrap();
        prop_assert!(loss >= 0.0 && loss.is_finite());
        for row in grad.data().chunks_exact(k) {
            prop_assert!(row.iter().sum::<f64>().abs() <= 1e-12);
        }
    }

    #[test]
    fn gemm_matches_triple_loop(
        (m, k, a) in matrix(11, 20),
        n in 1usize..140,
        bseed in prop::collection::vec(-2.0..2.0f64, 1..64),
    ) {
        let b: Vec<f64> = (0..k * n).map(|i| bseed[i % bseed.len()] * (1.0 + i as f64 * 1e-3)).collect();
        let init: Vec<f64> = (0..m * n).map(|i| i as f64 * 0.5).collect();
        let mut c = init.clone();
        gemm_acc(m, k, n, &a, &b, &mut c);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                prop_assert_eq!(c[i * n + j].to_bits(), (init[i * n + j] + s).to_bits());
            }
        }
        prop_assert_eq!(transpose(&transpose(&a, m, k), k, m), a);
    }
}
