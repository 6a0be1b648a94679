//! Single-head scaled dot-product self-attention over sequence positions.
//!
//! For one batch item with tokens `X: [L, C]`:
//!
//! ```text
//! Q = X W_qᵀ, K = X W_kᵀ, V = X W_vᵀ        (W_*: [d_k, C])
//! P = softmax_rows(Q Kᵀ / sqrt(d_k))        ([L, L], row-stochastic)
//! A = P V                                    ([L, d_k])
//! ```
//!
//! Backward through the softmax uses `dS = P ⊙ (dP - rowsum(dP ⊙ P))`.

use rand::Rng;

use crate::error::{shape_err, NnError, Result};
use crate::linalg::{gemm_acc, transpose};
use crate::param::{Param, ParamInit};
use crate::tensor::Tensor;
use crate::{Layer, Mode};

#[derive(Debug, Clone)]
pub struct Attention {
    pub wq: Param,
    pub wk: Param,
    pub wv: Param,
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    x: Tensor,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    p: Vec<f64>,
    len: usize,
}

/// `out[i, o] = Σ_c x[i, c] w[o, c]` for row-major `x: [n, c]`, `w: [m, c]`.
fn project(x: &[f64], w: &[f64], c: usize, m: usize) -> Vec<f64> {
    let n = x.len() / c;
    let mut out = vec![0.0; n * m];
    gemm_acc(n, c, m, x, &transpose(w, m, c), &mut out);
    out
}

impl Attention {
    pub fn new(name: &str, channels: usize, d_k: usize, rng: &mut impl Rng) -> Self {
        let init = ParamInit::XavierUniform {
            fan_in: channels,
            fan_out: d_k,
        };
        Self {
            wq: Param::new(format!("{name}.wq"), &[d_k, channels], init, rng),
            wk: Param::new(format!("{name}.wk"), &[d_k, channels], init, rng),
            wv: Param::new(format!("{name}.wv"), &[d_k, channels], init, rng),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.wq.shape()[1]
    }

    pub fn d_k(&self) -> usize {
        self.wq.shape()[0]
    }

    /// Attention weights `[B, L, L]` from the last forward pass.
    pub fn last_weights(&self) -> Option<Tensor> {
        let c = self.cache.as_ref()?;
        let b = c.x.shape()[0];
        Tensor::from_vec(&[b, c.len, c.len], c.p.clone()).ok()
    }
}

impl Layer for Attention {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let (c, dk) = (self.channels(), self.d_k());
        x.expect_shape(&[None, None, Some(c)], "attention input")?;
        let (b, len) = (x.shape()[0], x.shape()[1]);
        let q = project(x.data(), self.wq.value.data(), c, dk);
        let k = project(x.data(), self.wk.value.data(), c, dk);
        let v = project(x.data(), self.wv.value.data(), c, dk);
        let scale = 1.0 / (dk as f64).sqrt();
        let mut p = vec![0.0; b * len * len];
        let mut out = Tensor::zeros(&[b, len, dk]);
        for bi in 0..b {
            let qb = &q[bi * len * dk..(bi + 1) * len * dk];
            let kb = &k[bi * len * dk..(bi + 1) * len * dk];
            let vb = &v[bi * len * dk..(bi + 1) * len * dk];
            let pb = &mut p[bi * len * len..(bi + 1) * len * len];
            for i in 0..len {
                let qi = &qb[i * dk..(i + 1) * dk];
                let row = &mut pb[i * len..(i + 1) * len];
                for (j, s) in row.iter_mut().enumerate() {
                    let kj = &kb[j * dk..(j + 1) * dk];
                    let mut acc = 0.0;
                    for (a, bb) in qi.iter().zip(kj) {
                        acc += a * bb;
                    }
                    *s = acc * scale;
                }
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    z += *s;
                }
                for s in row.iter_mut() {
                    *s /= z;
                }
                let o = &mut out.data_mut()[(bi * len + i) * dk..(bi * len + i + 1) * dk];
                for (j, &pij) in row.iter().enumerate() {
                    for (ov, vv) in o.iter_mut().zip(&vb[j * dk..(j + 1) * dk]) {
                        *ov += pij * vv;
                    }
                }
            }
        }
        self.cache = Some(Cache {
            x: x.clone(),
            q,
            k,
            v,
            p,
            len,
        });
        Ok(out)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(NnError::NoCache)?;
        let (c, dk, len) = (self.channels(), self.d_k(), cache.len);
        let b = cache.x.shape()[0];
        if dy.shape() != [b, len, dk] {
            return Err(shape_err(format!("attention grad {:?}", dy.shape())));
        }
        let scale = 1.0 / (dk as f64).sqrt();
        let mut dq = vec![0.0; b * len * dk];
        let mut dk_ = vec![0.0; b * len * dk];
        let mut dv = vec![0.0; b * len * dk];
        let mut dp_row = vec![0.0; len];
        for bi in 0..b {
            let off = bi * len * dk;
            let (qb, kb, vb) = (
                &cache.q[off..off + len * dk],
                &cache.k[off..off + len * dk],
                &cache.v[off..off + len * dk],
            );
            let pb = &cache.p[bi * len * len..(bi + 1) * len * len];
            let gb = &dy.data()[off..off + len * dk];
            for i in 0..len {
                let gi = &gb[i * dk..(i + 1) * dk];
                let prow = &pb[i * len..(i + 1) * len];
                // dP[i, j] = dA[i] · V[j];  dV[j] += P[i, j] dA[i]
                for j in 0..len {
                    let vj = &vb[j * dk..(j + 1) * dk];
                    let mut acc = 0.0;
                    for (a, bb) in gi.iter().zip(vj) {
                        acc += a * bb;
                    }
                    dp_row[j] = acc;
                    let pij = prow[j];
                    for (d, g) in dv[off + j * dk..off + (j + 1) * dk].iter_mut().zip(gi) {
                        *d += pij * g;
                    }
                }
                let dot: f64 = dp_row.iter().zip(prow).map(|(a, p)| a * p).sum();
                for j in 0..len {
                    let ds = prow[j] * (dp_row[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = &kb[j * dk..(j + 1) * dk];
                    for (d, kv) in dq[off + i * dk..off + (i + 1) * dk].iter_mut().zip(kj) {
                        *d += ds * kv;
                    }
                    let qi = &qb[i * dk..(i + 1) * dk];
                    for (d, qv) in dk_[off + j * dk..off + (j + 1) * dk].iter_mut().zip(qi) {
                        *d += ds * qv;
                    }
                }
            }
        }
        let x = cache.x.data();
        let rows = b * len;
        let mut dx = Tensor::zeros(&[b, len, c]);
        for (param, grad) in [(&mut self.wq, &dq), (&mut self.wk, &dk_), (&mut self.wv, &dv)] {
            gemm_acc(dk, rows, c, &transpose(grad, rows, dk), x, param.grad.data_mut());
            gemm_acc(rows, dk, c, grad, param.value.data(), dx.data_mut());
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.wq, &self.wk, &self.wv]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.wq, &mut self.wk, &mut self.wv]
    }
}
