//! Parameter initialisers.

use rand::Rng;

use super::ConvSpec;
use crate::tensor::{Scalar, Tensor};

/// Half-width `sqrt(6 / (fan_in + fan_out))` of the Xavier uniform range.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// I.i.d. samples from `U(lo, hi)`.
pub fn uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.gen_range(lo..=hi)))
}

/// Xavier-uniform convolution weights with fan_in = C·Kh·Kw and fan_out = O·Kh·Kw.
pub fn xavier_uniform<T: Scalar, R: Rng + ?Sized>(spec: &ConvSpec, rng: &mut R) -> Tensor<T> {
    let a = xavier_bound(spec.fan_in(), spec.fan_out());
    uniform(&spec.weight_shape(), -a, a, rng)
}
