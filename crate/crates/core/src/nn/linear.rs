use rand::Rng;

use super::{init, Layer, Param};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn check_linear<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize)> {
    if weights.shape().len() != 2 {
        return Err(Error::shape("linear weights (rank)", 2, weights.shape().len()));
    }
    let (out_dim, in_dim) = (weights.shape()[0], weights.shape()[1]);
    input.expect_shape("linear input", &[in_dim])?;
    bias.expect_shape("linear bias", &[out_dim])?;
    Ok((out_dim, in_dim))
}

/// `out = W · input + b`.
pub fn linear_forward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (out_dim, in_dim) = check_linear(input, weights, bias)?;
    let mut out = bias.clone();
    T::gemm(out_dim, in_dim, 1, weights.data(), false, input.data(), false, T::one(), out.data_mut());
    Ok(out)
}

/// Returns the input gradient; accumulates `g · inputᵀ` and `g` into the
/// parameter gradients.
pub fn linear_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_weights: &mut Tensor<T>,
    grad_bias: &mut Tensor<T>,
) -> Result<Tensor<T>> {
    let (out_dim, in_dim) = check_linear(input, weights, grad_bias)?;
    grad_out.expect_shape("linear grad_out", &[out_dim])?;
    grad_weights.expect_shape("linear weight gradient", weights.shape())?;
    T::gemm(out_dim, 1, in_dim, grad_out.data(), false, input.data(), false, T::one(), grad_weights.data_mut());
    grad_bias.add_assign(grad_out);
    let mut grad_in = Tensor::zeros(&[in_dim]);
    T::gemm(in_dim, out_dim, 1, weights.data(), true, grad_out.data(), false, T::zero(), grad_in.data_mut());
    Ok(grad_in)
}

/// Fully-connected layer over 1-D vectors.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    weight: Param<T>,
    bias: Param<T>,
    inputs: Vec<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(name: &str, in_dim: usize, out_dim: usize) -> Self {
        Linear {
            weight: Param::new(format!("{name}.weight"), Tensor::zeros(&[out_dim, in_dim])),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[out_dim])),
            inputs: Vec::new(),
        }
    }

    pub fn xavier<R: Rng + ?Sized>(name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let mut layer = Self::new(name, in_dim, out_dim);
        let bound = init::xavier_bound(in_dim, out_dim);
        layer.weight.value = init::uniform(&[out_dim, in_dim], -bound, bound, rng);
        layer
    }

    pub fn weight_mut(&mut self) -> &mut Param<T> {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut Param<T> {
        &mut self.bias
    }
}

impl<T: Scalar> Layer<T> for Linear<T> {
    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out = linear_forward(input, &self.weight.value, &self.bias.value)?;
        self.inputs.push(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.inputs.pop().ok_or(Error::NoCache("linear"))?;
        linear_backward(grad_out, &input, &self.weight.value, &mut self.weight.grad, &mut self.bias.grad)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn clear_cache(&mut self) {
        self.inputs.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{gradcheck_layer, GradCheckConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weights() {
        let w = Tensor::from_fn(&[3, 3], |i| if i[0] == i[1] { 1.0f64 } else { 0.0 });
        let x = Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        assert_eq!(linear_forward(&x, &w, &Tensor::zeros(&[3])).unwrap(), x);
    }

    #[test]
    fn hand_matrix_vector() {
        let w = Tensor::from_vec(&[2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let x = Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap();
        let y = linear_forward(&x, &w, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(y.data(), &[3.0, 7.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let w = Tensor::<f32>::zeros(&[2, 3]);
        assert!(linear_forward(&Tensor::zeros(&[2]), &w, &Tensor::zeros(&[2])).is_err());
        assert!(linear_forward(&Tensor::zeros(&[3]), &w, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn zero_grad_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut lin = Linear::<f64>::xavier("l", 4, 3, &mut rng);
        lin.forward(&Tensor::full(&[4], 0.3)).unwrap();
        let gi = lin.backward(&Tensor::zeros(&[3])).unwrap();
        assert_eq!(gi.max_abs(), 0.0);
        assert!(lin.params().iter().all(|p| p.grad.max_abs() == 0.0));
    }

    #[test]
    fn gradcheck_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut lin = Linear::<f64>::xavier("l", 6, 4, &mut rng);
        for b in lin.bias_mut().value.data_mut() {
            *b = rng.gen_range(-1.0..1.0);
        }
        let x = Tensor::from_fn(&[6], |_| rng.gen_range(-1.0..1.0));
        let report = gradcheck_layer(&mut lin, &x, &GradCheckConfig::default(), 2);
        assert!(report.max_rel_error <= 1e-6, "{report}");
    }
}
