//! Minimal tensor and layer toolkit with exact, hand-written backward passes.
//!
//! Every layer caches what it needs during `forward` and consumes that cache
//! in `backward`, accumulating parameter gradients into its [`Param`]s. There
//! is no autodiff tape: networks are wired by hand from these pieces.

pub mod activation;
pub mod attention;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod loss;
pub mod optim;
pub mod param;
pub mod pool;
pub mod tensor;

pub use activation::{Dropout, Relu};
pub use attention::Attention;
pub use batchnorm::BatchNorm1d;
pub use conv::Conv1d;
pub use dense::Dense;
pub use error::{NnError, Result};
pub use gradcheck::{check_layer, relative_error, GradCheckReport};
pub use loss::{cross_entropy, softmax_rows};
pub use optim::AdamW;
pub use param::{Param, ParamInit};
pub use pool::AdaptiveMaxPool1d;
pub use tensor::Tensor;

/// Forward-pass mode. Only dropout and batch normalization behave differently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A differentiable building block.
///
/// `backward` must be called after a `forward` and consumes the cached
/// activations of that call. Parameter gradients are *accumulated*; call
/// [`Layer::zero_grad`] between optimizer steps.
pub trait Layer {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor>;

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor>;

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}
