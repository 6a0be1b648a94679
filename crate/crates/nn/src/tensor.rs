use crate::error::{shape_err, Result};

/// Dense row-major `f64` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(shape_err(format!("cannot reshape {:?} into {:?}", self.shape, shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Checks that the tensor has `expected.len()` dimensions; `None` entries match any size.
    pub fn expect_shape(&self, expected: &[Option<usize>], what: &str) -> Result<()> {
        let ok = self.shape.len() == expected.len()
            && self.shape.iter().zip(expected).all(|(&s, e)| e.is_none_or(|e| e == s));
        if ok {
            Ok(())
        } else {
            Err(shape_err(format!(
                "{what}: got {:?}, expected {:?}",
                self.shape, expected
            )))
        }
    }

    /// `[B, A, C] -> [B, C, A]`.
    pub fn swap_last_two(&self) -> Result<Tensor> {
        self.expect_shape(&[None, None, None], "swap_last_two")?;
        let (b, a, c) = (self.shape[0], self.shape[1], self.shape[2]);
        let mut out = vec![0.0; self.data.len()];
        for bi in 0..b {
            let src = &self.data[bi * a * c..(bi + 1) * a * c];
            let dst = &mut out[bi * a * c..(bi + 1) * a * c];
            for i in 0..a {
                for j in 0..c {
                    dst[j * a + i] = src[i * c + j];
                }
            }
        }
        Ok(Tensor {
            shape: vec![b, c, a],
            data: out,
        })
    }

    /// Concatenates along axis 1. All inputs must agree on every other axis.
    pub fn concat_axis1(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| shape_err("concat of nothing"))?;
        let b = first.shape[0];
        let inner: usize = first.shape[2..].iter().product();
        for p in parts {
            if p.shape[0] != b || p.shape[2..] != first.shape[2..] {
                return Err(shape_err(format!("concat: {:?} vs {:?}", p.shape, first.shape)));
            }
        }
        let total: usize = parts.iter().map(|p| p.shape[1]).sum();
        let mut data = Vec::with_capacity(b * total * inner);
        for bi in 0..b {
            for p in parts {
                let w = p.shape[1] * inner;
                data.extend_from_slice(&p.data[bi * w..(bi + 1) * w]);
            }
        }
        let mut shape = first.shape.clone();
        shape[1] = total;
        Ok(Tensor { shape, data })
    }

    /// Inverse of [`Tensor::concat_axis1`]: splits axis 1 into chunks of the given widths.
    pub fn split_axis1(&self, widths: &[usize]) -> Result<Vec<Tensor>> {
        if self.shape.len() < 2 || widths.iter().sum::<usize>() != self.shape[1] {
            return Err(shape_err(format!("split {:?} into widths {:?}", self.shape, widths)));
        }
        let b = self.shape[0];
        let inner: usize = self.shape[2..].iter().product();
        let row = self.shape[1] * inner;
        let mut out: Vec<Tensor> = widths
            .iter()
            .map(|&w| {
                let mut shape = self.shape.clone();
                shape[1] = w;
                Tensor::zeros(&shape)
            })
            .collect();
        for bi in 0..b {
            let mut offset = bi * row;
            for (t, &w) in out.iter_mut().zip(widths) {
                let n = w * inner;
                t.data[bi * n..(bi + 1) * n].copy_from_slice(&self.data[offset..offset + n]);
                offset += n;
            }
        }
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err(format!("add: {:?} vs {:?}", self.shape, other.shape)));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn swap_roundtrip() {
        let t = Tensor::from_vec(&[2, 2, 3], (0..12).map(f64::from).collect()).unwrap();
        let s = t.swap_last_two().unwrap();
        assert_eq!(s.shape(), &[2, 3, 2]);
        assert_eq!(s.data()[1], 3.0);
        assert_eq!(s.swap_last_two().unwrap(), t);
    }

    #[test]
    fn concat_then_split() {
        let a = Tensor::from_vec(&[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2, 2, 2], (5..13).map(f64::from).collect()).unwrap();
        let c = Tensor::concat_axis1(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 3, 2]);
        assert_eq!(&c.data()[..6], &[1.0, 2.0, 5.0, 6.0, 7.0, 8.0]);
        let parts = c.split_axis1(&[1, 2]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn bad_shape_rejected() {
        assert!(Tensor::from_vec(&[2, 2], vec![1.0]).is_err());
    }
}
