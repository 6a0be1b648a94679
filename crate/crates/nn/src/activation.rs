use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, NnError, Result};
use crate::tensor::Tensor;
use crate::{Layer, Mode};

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
    shape: Vec<usize>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Relu {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let mut y = x.clone();
        let mut mask = Vec::with_capacity(x.len());
        for v in y.data_mut() {
            let keep = *v > 0.0;
            if !keep {
                *v = 0.0;
            }
            mask.push(keep);
        }
        self.mask = Some(mask);
        self.shape = x.shape().to_vec();
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let mask = self.mask.as_ref().ok_or(NnError::NoCache)?;
        if dy.shape() != self.shape.as_slice() {
            return Err(shape_err(format!("relu grad {:?}", dy.shape())));
        }
        let mut dx = dy.clone();
        for (g, &m) in dx.data_mut().iter_mut().zip(mask) {
            if !m {
                *g = 0.0;
            }
        }
        Ok(dx)
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)` during training.
///
/// Owns its own seeded generator so masks are reproducible for a given seed
/// and call sequence. Eval mode never touches the generator.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::BadRate(rate));
        }
        Ok(Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: None,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }
}

/// Draws a keep/drop indicator mask (1.0 = kept) of length `n`.
pub fn keep_mask(n: usize, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n)
        .map(|_| if rng.random::<f64>() >= rate { 1.0 } else { 0.0 })
        .collect()
}

impl Layer for Dropout {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        if mode == Mode::Eval || self.rate == 0.0 {
            self.mask = None;
            return Ok(x.clone());
        }
        let scale = 1.0 / (1.0 - self.rate);
        let mask: Vec<f64> = keep_mask(x.len(), self.rate, &mut self.rng)
            .into_iter()
            .map(|k| k * scale)
            .collect();
        let mut y = x.clone();
        for (v, m) in y.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        self.mask = Some(mask);
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let Some(mask) = &self.mask else {
            return Ok(dy.clone());
        };
        if mask.len() != dy.len() {
            return Err(shape_err("dropout grad length"));
        }
        let mut dx = dy.clone();
        for (g, m) in dx.data_mut().iter_mut().zip(mask) {
            *g *= m;
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_zeroes_negatives_and_their_grads() {
        let mut r = Relu::new();
        let x = Tensor::from_vec(&[1, 4], vec![-1.0, 0.0, 2.0, -0.5]).unwrap();
        let y = r.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0, 0.0]);
        let g = r.backward(&Tensor::filled(&[1, 4], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_rate_and_eval_are_identity() {
        let x = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut d0 = Dropout::new(0.0, 1).unwrap();
        assert_eq!(d0.forward(&x, Mode::Train).unwrap(), x);
        let mut d = Dropout::new(0.3, 1).unwrap();
        assert_eq!(d.forward(&x, Mode::Eval).unwrap(), x);
    }

    #[test]
    fn bad_rate() {
        assert_eq!(Dropout::new(1.0, 0).unwrap_err(), NnError::BadRate(1.0));
        assert!(Dropout::new(-0.1, 0).is_err());
    }

    #[test]
    fn keep_fraction_matches_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let mask = keep_mask(1_000_000, 0.3, &mut rng);
        let mean = mask.iter().sum::<f64>() / mask.len() as f64;
        assert!((mean - 0.7).abs() <= 0.01, "mean {mean}");
    }

    #[test]
    fn kept_units_are_rescaled() {
        let mut d = Dropout::new(0.5, 9).unwrap();
        let x = Tensor::filled(&[1, 64], 1.0);
        let y = d.forward(&x, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
        let g = d.backward(&Tensor::filled(&[1, 64], 1.0)).unwrap();
        assert_eq!(g, y);
    }
}
