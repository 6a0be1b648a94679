use rand::Rng;

use crate::tensor::Tensor;

/// A learnable tensor with its gradient and AdamW moment buffers.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
}

/// Initialization scheme for a fresh parameter.
#[derive(Debug, Clone, Copy)]
pub enum ParamInit {
    Zeros,
    Ones,
    /// He/Kaiming uniform, bound `sqrt(6 / fan_in)`.
    KaimingUniform {
        fan_in: usize,
    },
    /// Glorot uniform, bound `sqrt(6 / (fan_in + fan_out))`.
    XavierUniform {
        fan_in: usize,
        fan_out: usize,
    },
}

impl Param {
    pub fn new(name: impl Into<String>, shape: &[usize], init: ParamInit, rng: &mut impl Rng) -> Self {
        let mut value = Tensor::zeros(shape);
        let bound = match init {
            ParamInit::Zeros => None,
            ParamInit::Ones => {
                value.data_mut().fill(1.0);
                None
            }
            ParamInit::KaimingUniform { fan_in } => Some((6.0 / fan_in.max(1) as f64).sqrt()),
            ParamInit::XavierUniform { fan_in, fan_out } => Some((6.0 / (fan_in + fan_out).max(1) as f64).sqrt()),
        };
        if let Some(bound) = bound {
            for v in value.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        Self {
            name: name.into(),
            grad: Tensor::zeros(shape),
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            value,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}
