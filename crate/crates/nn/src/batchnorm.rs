use rand::Rng;

use crate::error::{shape_err, NnError, Result};
use crate::param::{Param, ParamInit};
use crate::tensor::Tensor;
use crate::{Layer, Mode};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `[B, C, L]`.
///
/// Train mode normalizes with the biased batch variance over `(B, L)` and
/// folds the unbiased variance into the running estimate; eval mode uses the
/// running estimates only.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    mode: Mode,
    x_hat: Tensor,
    inv_std: Vec<f64>,
}

impl BatchNorm1d {
    pub fn new(name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), &[channels], ParamInit::Ones, rng),
            beta: Param::new(format!("{name}.beta"), &[channels], ParamInit::Zeros, rng),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

impl Layer for BatchNorm1d {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let c = self.channels();
        x.expect_shape(&[None, Some(c), None], "batchnorm input")?;
        let (b, len) = (x.shape()[0], x.shape()[2]);
        let n = b * len;
        let xd = x.data();
        let (mean, var) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(NnError::DegenerateBatch(n));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for bi in 0..b {
                        s += xd[(bi * c + ch) * len..(bi * c + ch + 1) * len].iter().sum::<f64>();
                    }
                    let mu = s / n as f64;
                    let mut ss = 0.0;
                    for bi in 0..b {
                        for v in &xd[(bi * c + ch) * len..(bi * c + ch + 1) * len] {
                            ss += (v - mu) * (v - mu);
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = ss / n as f64;
                    let unbiased = ss / (n - 1) as f64;
                    self.running_mean[ch] = (1.0 - BN_MOMENTUM) * self.running_mean[ch] + BN_MOMENTUM * mu;
                    self.running_var[ch] = (1.0 - BN_MOMENTUM) * self.running_var[ch] + BN_MOMENTUM * unbiased;
                }
                (mean, var)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut x_hat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        let (g, be) = (self.gamma.value.data(), self.beta.value.data());
        for bi in 0..b {
            for ch in 0..c {
                let r = (bi * c + ch) * len..(bi * c + ch + 1) * len;
                for i in r {
                    let h = (xd[i] - mean[ch]) * inv_std[ch];
                    x_hat.data_mut()[i] = h;
                    y.data_mut()[i] = g[ch] * h + be[ch];
                }
            }
        }
        self.cache = Some(Cache { mode, x_hat, inv_std });
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(NnError::NoCache)?;
        if dy.shape() != cache.x_hat.shape() {
            return Err(shape_err(format!("batchnorm grad {:?}", dy.shape())));
        }
        let c = self.channels();
        let (b, len) = (dy.shape()[0], dy.shape()[2]);
        let n = (b * len) as f64;
        let (dyd, xh) = (dy.data(), cache.x_hat.data());
        let g = self.gamma.value.data();
        let mut dx = Tensor::zeros(dy.shape());
        for ch in 0..c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xh = 0.0;
            for bi in 0..b {
                let r = (bi * c + ch) * len..(bi * c + ch + 1) * len;
                for i in r {
                    sum_dy += dyd[i];
                    sum_dy_xh += dyd[i] * xh[i];
                }
            }
            self.gamma.grad.data_mut()[ch] += sum_dy_xh;
            self.beta.grad.data_mut()[ch] += sum_dy;
            let scale = g[ch] * cache.inv_std[ch];
            for bi in 0..b {
                let r = (bi * c + ch) * len..(bi * c + ch + 1) * len;
                for i in r {
                    dx.data_mut()[i] = match cache.mode {
                        Mode::Train => scale * (dyd[i] - sum_dy / n - xh[i] * sum_dy_xh / n),
                        Mode::Eval => scale * dyd[i],
                    };
                }
            }
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}
