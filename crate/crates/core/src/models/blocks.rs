use rand::Rng;

use crate::error::Result;
use crate::nn::{Activation, ActivationKind, Conv2d, ConvSpec, Layer, MaxPool2x2, Param, UpsampleNearest2x};
use crate::tensor::{Scalar, Tensor};

/// Spatial encoder: same-padded convolution, tanh, 2×2 max pooling.
#[derive(Clone, Debug)]
pub struct Encoder<T> {
    conv: Conv2d<T>,
    act: Activation<T>,
    pool: MaxPool2x2,
}

impl<T: Scalar> Encoder<T> {
    pub fn xavier<R: Rng + ?Sized>(name: &str, channels: usize, filters: usize, kernel: usize, rng: &mut R) -> Result<Self> {
        Ok(Encoder {
            conv: Conv2d::xavier(&format!("{name}.conv"), ConvSpec::same(channels, filters, kernel, true), rng)?,
            act: Activation::new(ActivationKind::Tanh),
            pool: MaxPool2x2::new(),
        })
    }

    pub fn param_count(channels: usize, filters: usize, kernel: usize) -> usize {
        ConvSpec::same(channels, filters, kernel, true).num_params()
    }
}

impl<T: Scalar> Layer<T> for Encoder<T> {
    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let a = self.conv.forward(input)?;
        let a = self.act.forward(&a)?;
        self.pool.forward(&a)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.pool.backward(grad_out)?;
        let g = self.act.backward(&g)?;
        self.conv.backward(&g)
    }

    fn params(&self) -> Vec<&Param<T>> {
        self.conv.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.conv.params_mut()
    }

    fn clear_cache(&mut self) {
        self.conv.clear_cache();
        self.act.clear_cache();
        Layer::<T>::clear_cache(&mut self.pool);
    }
}

/// Spatial decoder: nearest-neighbour 2× upsampling and a same-padded
/// convolution back to the frame channels. No output nonlinearity.
#[derive(Clone, Debug)]
pub struct Decoder<T> {
    up: UpsampleNearest2x,
    conv: Conv2d<T>,
}

impl<T: Scalar> Decoder<T> {
    pub fn xavier<R: Rng + ?Sized>(name: &str, filters: usize, channels: usize, kernel: usize, rng: &mut R) -> Result<Self> {
        Ok(Decoder {
            up: UpsampleNearest2x::new(),
            conv: Conv2d::xavier(&format!("{name}.conv"), ConvSpec::same(filters, channels, kernel, true), rng)?,
        })
    }

    pub fn param_count(filters: usize, channels: usize, kernel: usize) -> usize {
        ConvSpec::same(filters, channels, kernel, true).num_params()
    }
}

impl<T: Scalar> Layer<T> for Decoder<T> {
    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let a = self.up.forward(input)?;
        self.conv.forward(&a)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.conv.backward(grad_out)?;
        self.up.backward(&g)
    }

    fn params(&self) -> Vec<&Param<T>> {
        self.conv.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.conv.params_mut()
    }

    fn clear_cache(&mut self) {
        Layer::<T>::clear_cache(&mut self.up);
        self.conv.clear_cache();
    }
}
