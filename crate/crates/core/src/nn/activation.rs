use super::Layer;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActivationKind {
    Tanh,
    Sigmoid,
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

impl ActivationKind {
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            ActivationKind::Tanh => z.tanh(),
            ActivationKind::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the activation's output.
    pub fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            ActivationKind::Tanh => T::one() - y * y,
            ActivationKind::Sigmoid => y * (T::one() - y),
        }
    }
}

/// Elementwise nonlinearity layer.
#[derive(Clone, Debug)]
pub struct Activation<T> {
    kind: ActivationKind,
    outputs: Vec<Tensor<T>>,
}

impl<T: Scalar> Activation<T> {
    pub fn new(kind: ActivationKind) -> Self {
        Activation {
            kind,
            outputs: Vec::new(),
        }
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }
}

impl<T: Scalar> Layer<T> for Activation<T> {
    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let kind = self.kind;
        let out = input.map(|z| kind.apply(z));
        self.outputs.push(out.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.outputs.pop().ok_or(Error::NoCache("activation"))?;
        out.same_shape(grad_out, "activation grad_out")?;
        let kind = self.kind;
        Ok(out.zip_map(grad_out, |y, g| g * kind.derivative_from_output(y)))
    }

    fn clear_cache(&mut self) {
        self.outputs.clear();
    }
}
