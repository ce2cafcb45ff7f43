use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvSpec, Layer, Param};
use crate::tensor::{Scalar, Tensor};

/// Flow regressor: two bias-free large-kernel convolutions (memory → 2 → 2)
/// followed by a 1×1 convolution with bias. No nonlinearities in between.
#[derive(Clone, Debug)]
pub struct ThetaRegressor<T> {
    layers: [Conv2d<T>; 3],
}

impl<T: Scalar> ThetaRegressor<T> {
    fn specs(memory_channels: usize, kernel: usize) -> [ConvSpec; 3] {
        [
            ConvSpec::same(memory_channels, 2, kernel, false),
            ConvSpec::same(2, 2, kernel, false),
            ConvSpec::same(2, 2, 1, true),
        ]
    }

    pub fn new(name: &str, memory_channels: usize, kernel: usize) -> Result<Self> {
        let [a, b, c] = Self::specs(memory_channels, kernel);
        Ok(ThetaRegressor {
            layers: [
                Conv2d::new(&format!("{name}.conv1"), a)?,
                Conv2d::new(&format!("{name}.conv2"), b)?,
                Conv2d::new(&format!("{name}.proj"), c)?,
            ],
        })
    }

    pub fn xavier<R: Rng + ?Sized>(name: &str, memory_channels: usize, kernel: usize, rng: &mut R) -> Result<Self> {
        let [a, b, c] = Self::specs(memory_channels, kernel);
        Ok(ThetaRegressor {
            layers: [
                Conv2d::xavier(&format!("{name}.conv1"), a, rng)?,
                Conv2d::xavier(&format!("{name}.conv2"), b, rng)?,
                Conv2d::xavier(&format!("{name}.proj"), c, rng)?,
            ],
        })
    }

    /// `m·2·K² + 2·2·K² + 2·2 + 2`.
    pub fn param_count(memory_channels: usize, kernel: usize) -> usize {
        Self::specs(memory_channels, kernel).iter().map(|s| s.num_params()).sum()
    }

    pub fn memory_channels(&self) -> usize {
        self.layers[0].spec().in_channels
    }

    /// Sets every weight and bias to zero, making the predicted flow zero.
    pub fn zero_out(&mut self) {
        for p in self.params_mut() {
            p.value.fill(T::zero());
        }
    }
}

impl<T: Scalar> Layer<T> for ThetaRegressor<T> {
    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let want = self.memory_channels();
        if input.shape().first() != Some(&want) {
            return Err(Error::shape(
                "flow regressor input (dimension 0, channels)",
                want,
                input.shape().first().copied().unwrap_or(0),
            ));
        }
        let a = self.layers[0].forward(input)?;
        let b = self.layers[1].forward(&a)?;
        self.layers[2].forward(&b)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.layers[2].backward(grad_out)?;
        let g = self.layers[1].backward(&g)?;
        self.layers[0].backward(&g)
    }

    fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(|l| l.clear_cache());
    }
}
