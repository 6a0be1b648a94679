use rand::Rng;

use crate::error::{shape_err, NnError, Result};
use crate::linalg::{gemm_acc, transpose};
use crate::param::{Param, ParamInit};
use crate::tensor::Tensor;
use crate::{Layer, Mode};

/// Same-length 1-D convolution (cross-correlation) over `[B, C_in, L]`.
///
/// Zero padding of `(k - 1) / 2` on both sides; `k` must be odd.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: Param,
    pub bias: Option<Param>,
    kernel: usize,
    cache: Option<ConvCache>,
}

#[derive(Debug, Clone)]
struct ConvCache {
    col: Vec<f64>,
    b: usize,
    len: usize,
}

impl Conv1d {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        with_bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(NnError::EvenKernel(kernel));
        }
        let weight = Param::new(
            format!("{name}.weight"),
            &[out_channels, in_channels, kernel],
            ParamInit::KaimingUniform {
                fan_in: in_channels * kernel,
            },
            rng,
        );
        let bias = with_bias.then(|| Param::new(format!("{name}.bias"), &[out_channels], ParamInit::Zeros, rng));
        Ok(Self {
            weight,
            bias,
            kernel,
            cache: None,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }
}

/// Range of output positions `l` for which `l + shift` lies inside `[0, len)`.
fn valid_range(shift: isize, len: usize) -> std::ops::Range<usize> {
    let lo = (-shift).max(0) as usize;
    let hi = (len as isize - shift).clamp(0, len as isize) as usize;
    lo.min(hi)..hi
}

/// Unfolds `x: [B, C, L]` into `[C * k, B * L]` so the convolution becomes
/// one matrix product. Row `c * k + t` holds tap `t` of channel `c`.
fn im2col(x: &[f64], b: usize, cin: usize, len: usize, k: usize) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let n = b * len;
    let mut col = vec![0.0; cin * k * n];
    for c in 0..cin {
        for t in 0..k {
            let shift = t as isize - pad;
            let r = valid_range(shift, len);
            if r.is_empty() {
                continue;
            }
            let row = &mut col[(c * k + t) * n..(c * k + t + 1) * n];
            for bi in 0..b {
                let xr = &x[(bi * cin + c) * len..(bi * cin + c + 1) * len];
                let lo = (r.start as isize + shift) as usize;
                let hi = (r.end as isize + shift) as usize;
                row[bi * len + r.start..bi * len + r.end].copy_from_slice(&xr[lo..hi]);
            }
        }
    }
    col
}

impl Layer for Conv1d {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let (cin, cout, k) = (self.in_channels(), self.out_channels(), self.kernel);
        x.expect_shape(&[None, Some(cin), None], "conv1d input")?;
        let (b, len) = (x.shape()[0], x.shape()[2]);
        let n = b * len;
        let col = im2col(x.data(), b, cin, len, k);
        let mut y2 = vec![0.0; cout * n];
        gemm_acc(cout, cin * k, n, self.weight.value.data(), &col, &mut y2);
        let mut y = Tensor::zeros(&[b, cout, len]);
        let yd = y.data_mut();
        for o in 0..cout {
            let bias = self.bias.as_ref().map_or(0.0, |p| p.value.data()[o]);
            for bi in 0..b {
                let src = &y2[o * n + bi * len..o * n + (bi + 1) * len];
                let dst = &mut yd[(bi * cout + o) * len..(bi * cout + o + 1) * len];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + bias;
                }
            }
        }
        self.cache = Some(ConvCache { col, b, len });
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(NnError::NoCache)?;
        let (cin, cout, k) = (self.in_channels(), self.out_channels(), self.kernel);
        let (b, len) = (cache.b, cache.len);
        if dy.shape() != [b, cout, len] {
            return Err(shape_err(format!("conv1d grad {:?}", dy.shape())));
        }
        let n = b * len;
        let mut dy2 = vec![0.0; cout * n];
        for o in 0..cout {
            for bi in 0..b {
                dy2[o * n + bi * len..o * n + (bi + 1) * len]
                    .copy_from_slice(&dy.data()[(bi * cout + o) * len..(bi * cout + o + 1) * len]);
            }
        }
        if let Some(bias) = self.bias.as_mut() {
            for (g, row) in bias.grad.data_mut().iter_mut().zip(dy2.chunks_exact(n)) {
                *g += row.iter().sum::<f64>();
            }
        }
        let ck = cin * k;
        let col_t = transpose(&cache.col, ck, n);
        gemm_acc(cout, n, ck, &dy2, &col_t, self.weight.grad.data_mut());
        let w_t = transpose(self.weight.value.data(), cout, ck);
        let mut dcol = vec![0.0; ck * n];
        gemm_acc(ck, cout, n, &w_t, &dy2, &mut dcol);

        let pad = (k / 2) as isize;
        let mut dx = Tensor::zeros(&[b, cin, len]);
        let dxd = dx.data_mut();
        for c in 0..cin {
            for t in 0..k {
                let shift = t as isize - pad;
                let r = valid_range(shift, len);
                if r.is_empty() {
                    continue;
                }
                let lo = (r.start as isize + shift) as usize;
                let hi = (r.end as isize + shift) as usize;
                let row = &dcol[(c * k + t) * n..(c * k + t + 1) * n];
                for bi in 0..b {
                    let dst = &mut dxd[(bi * cin + c) * len + lo..(bi * cin + c) * len + hi];
                    for (d, g) in dst.iter_mut().zip(&row[bi * len + r.start..bi * len + r.end]) {
                        *d += g;
                    }
                }
            }
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.weight];
        v.extend(self.bias.as_ref());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.weight];
        v.extend(self.bias.as_mut());
        v
    }
}
