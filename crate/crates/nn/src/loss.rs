use crate::error::{shape_err, NnError, Result};
use crate::tensor::Tensor;

/// Row-wise softmax of a `[B, K]` tensor, max-shifted for stability.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    logits.expect_shape(&[None, None], "softmax input")?;
    let k = logits.shape()[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Ok(out)
}

/// Mean cross-entropy over the batch and its gradient w.r.t. the logits,
/// `(softmax - onehot) / B`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    logits.expect_shape(&[Some(labels.len()), None], "cross-entropy logits")?;
    let (b, k) = (labels.len(), logits.shape()[1]);
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(NnError::BadLabel { label, classes: k });
    }
    if b == 0 {
        return Err(shape_err("cross-entropy of an empty batch"));
    }
    let mut grad = softmax_rows(logits)?;
    let mut loss = 0.0;
    for ((row, g), &y) in logits
        .data()
        .chunks_exact(k)
        .zip(grad.data_mut().chunks_exact_mut(k))
        .zip(labels)
    {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        g[y] -= 1.0;
        for v in g.iter_mut() {
            *v /= b as f64;
        }
    }
    Ok((loss / b as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor::filled(&[3, 4], 0.7);
        let (loss, _) = cross_entropy(&logits, &[0, 1, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() <= 1e-12);
    }

    #[test]
    fn loss_vanishes_with_margin() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 10.0, 20.0, 40.0] {
            let logits = Tensor::from_vec(&[1, 4], vec![margin, 0.0, 0.0, 0.0]).unwrap();
            let (loss, _) = cross_entropy(&logits, &[0]).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-15);
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::zeros(&[1, 4]);
        assert_eq!(
            cross_entropy(&logits, &[4]).unwrap_err(),
            NnError::BadLabel { label: 4, classes: 4 }
        );
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let t = Tensor::from_vec(&[2, 3], vec![1000.0, 0.0, -1000.0, 1.0, 2.0, 3.0]).unwrap();
        let s = softmax_rows(&t).unwrap();
        for row in s.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
