//! Dense row-major matrix kernels used by the convolution and attention layers.
//!
//! Summation order over the shared dimension is always ascending, so results
//! are reproducible bit for bit.

const MR: usize = 4;
const NR: usize = 8;
/// Column panel width; a `[k, NC]` panel of `b` stays cache resident.
const NC: usize = 64;

/// `c += a · b` with `a: [m, k]`, `b: [k, n]`, `c: [m, n]`.
///
/// Each output element is summed over `p` in ascending order into a local
/// accumulator and then added to `c`.
pub fn gemm_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    assert_eq!(a.len(), m * k, "gemm: lhs size");
    assert_eq!(b.len(), k * n, "gemm: rhs size");
    assert_eq!(c.len(), m * n, "gemm: out size");
    let mut panel = vec![0.0; k * NC];
    let m_full = m - m % MR;
    for j0 in (0..n).step_by(NC) {
        let w = NC.min(n - j0);
        let wp = w.div_ceil(NR) * NR;
        for p in 0..k {
            let dst = &mut panel[p * wp..(p + 1) * wp];
            dst[..w].copy_from_slice(&b[p * n + j0..p * n + j0 + w]);
            dst[w..].fill(0.0);
        }
        let panel = &panel[..k * wp];
        for i in (0..m_full).step_by(MR) {
            let rows: [&[f64]; MR] = std::array::from_fn(|r| &a[(i + r) * k..(i + r + 1) * k]);
            for jj in (0..wp).step_by(NR) {
                let mut acc = [[0.0f64; NR]; MR];
                for p in 0..k {
                    let bv: &[f64; NR] = panel[p * wp + jj..p * wp + jj + NR].try_into().expect("NR wide");
                    for r in 0..MR {
                        let av = rows[r][p];
                        for q in 0..NR {
                            acc[r][q] += av * bv[q];
                        }
                    }
                }
                let cols = NR.min(w.saturating_sub(jj));
                for (r, accr) in acc.iter().enumerate() {
                    let base = (i + r) * n + j0 + jj;
                    for (cv, s) in c[base..base + cols].iter_mut().zip(accr) {
                        *cv += s;
                    }
                }
            }
        }
        for i in m_full..m {
            let row = &a[i * k..(i + 1) * k];
            for jj in (0..wp).step_by(NR) {
                let mut acc = [0.0f64; NR];
                for (p, &av) in row.iter().enumerate() {
                    let bv = &panel[p * wp + jj..p * wp + jj + NR];
                    for q in 0..NR {
                        acc[q] += av * bv[q];
                    }
                }
                let cols = NR.min(w.saturating_sub(jj));
                let base = i * n + j0 + jj;
                for (cv, s) in c[base..base + cols].iter_mut().zip(&acc) {
                    *cv += s;
                }
            }
        }
    }
}

/// Transpose of a row-major `[rows, cols]` matrix.
pub fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    assert_eq!(x.len(), rows * cols, "transpose size");
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}
