use crate::error::{shape_err, NnError, Result};
use crate::tensor::Tensor;
use crate::{Layer, Mode};

/// Adaptive max pooling `[B, C, L] -> [B, C, out_len]`.
///
/// Bin `i` covers `[floor(i L / out), ceil((i + 1) L / out))`. The gradient
/// flows to the first maximal index of each bin.
#[derive(Debug, Clone)]
pub struct AdaptiveMaxPool1d {
    out_len: usize,
    argmax: Option<Vec<usize>>,
    in_shape: Vec<usize>,
}

pub fn bin_bounds(len: usize, out_len: usize, i: usize) -> (usize, usize) {
    let start = i * len / out_len;
    let end = ((i + 1) * len).div_ceil(out_len);
    (start, end)
}

impl AdaptiveMaxPool1d {
    pub fn new(out_len: usize) -> Self {
        Self {
            out_len,
            argmax: None,
            in_shape: Vec::new(),
        }
    }

    pub fn out_len(&self) -> usize {
        self.out_len
    }
}

impl Layer for AdaptiveMaxPool1d {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        x.expect_shape(&[None, None, None], "adaptive pool input")?;
        let (b, c, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if self.out_len == 0 || self.out_len > len {
            return Err(shape_err(format!(
                "pool output length {} for input length {len}",
                self.out_len
            )));
        }
        let mut y = Tensor::zeros(&[b, c, self.out_len]);
        let mut argmax = Vec::with_capacity(b * c * self.out_len);
        for (row_idx, row) in x.data().chunks_exact(len).enumerate() {
            for i in 0..self.out_len {
                let (s, e) = bin_bounds(len, self.out_len, i);
                let mut best = s;
                for j in s + 1..e {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                y.data_mut()[row_idx * self.out_len + i] = row[best];
                argmax.push(row_idx * len + best);
            }
        }
        self.argmax = Some(argmax);
        self.in_shape = x.shape().to_vec();
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let argmax = self.argmax.as_ref().ok_or(NnError::NoCache)?;
        if dy.len() != argmax.len() {
            return Err(shape_err(format!("pool grad {:?}", dy.shape())));
        }
        let mut dx = Tensor::zeros(&self.in_shape);
        for (&idx, g) in argmax.iter().zip(dy.data()) {
            dx.data_mut()[idx] += g;
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_length_is_identity() {
        let x = Tensor::from_vec(&[1, 2, 3], vec![1.0, 5.0, 2.0, -1.0, -3.0, 0.0]).unwrap();
        let mut p = AdaptiveMaxPool1d::new(3);
        assert_eq!(p.forward(&x, Mode::Eval).unwrap(), x);
    }

    #[test]
    fn single_bin_is_global_max_and_routes_to_first_tie() {
        let x = Tensor::from_vec(&[1, 1, 4], vec![1.0, 7.0, 7.0, 2.0]).unwrap();
        let mut p = AdaptiveMaxPool1d::new(1);
        let y = p.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.data(), &[7.0]);
        let g = p.backward(&Tensor::filled(&[1, 1, 1], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn bins_cover_input() {
        for len in 1..20 {
            for out in 1..=len {
                let (s0, _) = bin_bounds(len, out, 0);
                let (_, e_last) = bin_bounds(len, out, out - 1);
                assert_eq!((s0, e_last), (0, len));
                for i in 0..out {
                    let (s, e) = bin_bounds(len, out, i);
                    assert!(s < e);
                }
            }
        }
    }

    #[test]
    fn too_long_output_rejected() {
        let mut p = AdaptiveMaxPool1d::new(5);
        assert!(p.forward(&Tensor::zeros(&[1, 1, 4]), Mode::Eval).is_err());
    }
}
