//! Differentiable building blocks with explicit forward and backward passes.
//!
//! Every layer keeps a stack of forward caches. `forward` pushes one entry,
//! `backward` pops the most recent one, so a layer applied at several time
//! steps is differentiated by calling `backward` in reverse time order.
//! Parameter gradients accumulate until [`Param::zero_grad`] is called.

mod activation;
mod conv;
pub mod gradcheck;
pub mod init;
mod linear;
mod pool;
mod upsample;

pub use activation::{sigmoid, Activation, ActivationKind};
pub use conv::{conv2d_backward, conv2d_forward, Conv2d, ConvSpec};
pub use linear::{linear_backward, linear_forward, Linear};
pub use pool::MaxPool2x2;
pub use upsample::UpsampleNearest2x;

pub(crate) use conv::{col2im_add, im2col};

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// A named trainable tensor with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// The forward/backward protocol shared by all layers.
pub trait Layer<T: Scalar> {
    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>>;

    /// Consumes the most recent forward cache and returns the input gradient.
    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>>;

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }

    /// Drops all pending forward caches.
    fn clear_cache(&mut self);

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}
