use rand::Rng;

use crate::error::{shape_err, NnError, Result};
use crate::param::{Param, ParamInit};
use crate::tensor::Tensor;
use crate::{Layer, Mode};

/// Fully connected layer: `y = x Wᵀ + b` with `W: [out, in]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Dense {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                &[out_dim, in_dim],
                ParamInit::KaimingUniform { fan_in: in_dim },
                rng,
            ),
            bias: Param::new(format!("{name}.bias"), &[out_dim], ParamInit::Zeros, rng),
            input: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl Layer for Dense {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let (n_in, n_out) = (self.in_dim(), self.out_dim());
        x.expect_shape(&[None, Some(n_in)], "dense input")?;
        let b = x.shape()[0];
        let w = self.weight.value.data();
        let bias = self.bias.value.data();
        let mut y = Tensor::zeros(&[b, n_out]);
        for (row, out) in x.data().chunks_exact(n_in).zip(y.data_mut().chunks_exact_mut(n_out)) {
            for (o, slot) in out.iter_mut().enumerate() {
                let wr = &w[o * n_in..(o + 1) * n_in];
                let mut acc = 0.0;
                for (xi, wi) in row.iter().zip(wr) {
                    acc += xi * wi;
                }
                *slot = acc + bias[o];
            }
        }
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or(NnError::NoCache)?;
        let (n_in, n_out) = (self.in_dim(), self.out_dim());
        let b = x.shape()[0];
        if dy.shape() != [b, n_out] {
            return Err(shape_err(format!("dense grad {:?}", dy.shape())));
        }
        let gw = self.weight.grad.data_mut();
        let gb = self.bias.grad.data_mut();
        for (row, drow) in x.data().chunks_exact(n_in).zip(dy.data().chunks_exact(n_out)) {
            for (o, &d) in drow.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(row) {
                    *g += d * xi;
                }
            }
        }
        let w = self.weight.value.data();
        let mut dx = Tensor::zeros(&[b, n_in]);
        for (drow, dxrow) in dy.data().chunks_exact(n_out).zip(dx.data_mut().chunks_exact_mut(n_in)) {
            for (o, &d) in drow.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (g, wi) in dxrow.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *g += d * wi;
                }
            }
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
