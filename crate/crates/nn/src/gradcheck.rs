//! Central finite-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::Tensor;
use crate::{Layer, Mode};

/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Coordinate with the largest error, e.g. `"input[3]"` or `"d.weight[7]"`.
    pub worst: String,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn record(&mut self, what: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if self.worst.is_empty() || err > self.max_rel_err {
            self.max_rel_err = err;
            self.worst = what();
        }
    }
}

fn weighted_sum(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Checks every input and parameter coordinate of `layer` with step `h`.
///
/// The scalar objective is `Σ y ⊙ r` for a fixed random `r`, so the upstream
/// gradient fed to `backward` is `r` itself. `mode` must make the forward
/// pass deterministic (no live dropout).
pub fn check_layer<L: Layer>(layer: &mut L, input: &Tensor, h: f64, mode: Mode) -> Result<GradCheckReport> {
    let y = layer.forward(input, mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let r = Tensor::from_vec(y.shape(), (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    layer.zero_grad();
    let dx = layer.backward(&r)?;
    let analytic_params: Vec<Tensor> = layer.params().iter().map(|p| p.grad.clone()).collect();

    let mut report = GradCheckReport::default();
    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let fp = weighted_sum(&layer.forward(&x, mode)?, &r);
        x.data_mut()[i] = orig - h;
        let fm = weighted_sum(&layer.forward(&x, mode)?, &r);
        x.data_mut()[i] = orig;
        report.record(|| format!("input[{i}]"), dx.data()[i], (fp - fm) / (2.0 * h));
    }
    for (pi, analytic) in analytic_params.iter().enumerate() {
        for j in 0..analytic.len() {
            let orig = layer.params()[pi].value.data()[j];
            layer.params_mut()[pi].value.data_mut()[j] = orig + h;
            let fp = weighted_sum(&layer.forward(input, mode)?, &r);
            layer.params_mut()[pi].value.data_mut()[j] = orig - h;
            let fm = weighted_sum(&layer.forward(input, mode)?, &r);
            layer.params_mut()[pi].value.data_mut()[j] = orig;
            let name = layer.params()[pi].name.clone();
            report.record(|| format!("{name}[{j}]"), analytic.data()[j], (fp - fm) / (2.0 * h));
        }
    }
    Ok(report)
}
