use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Dense per-pixel displacement map, `2 × h × w`: channel 0 is the horizontal
/// component `t_x`, channel 1 the vertical `t_y`, both in grid pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField<T>(Tensor<T>);

impl<T: Scalar> FlowField<T> {
    pub fn new(tensor: Tensor<T>) -> Result<Self> {
        let s = tensor.shape();
        if s.len() != 3 || s[0] != 2 {
            return Err(Error::shape("flow field", "2×h×w", s));
        }
        Ok(FlowField(tensor))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        FlowField(Tensor::zeros(&[2, height, width]))
    }

    pub fn constant(tx: T, ty: T, height: usize, width: usize) -> Self {
        let mut t = Tensor::zeros(&[2, height, width]);
        t.channel_mut(0).fill(tx);
        t.channel_mut(1).fill(ty);
        FlowField(t)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> (T, T)) -> Self {
        let mut t = Tensor::zeros(&[2, height, width]);
        for y in 0..height {
            for x in 0..width {
                let (tx, ty) = f(x, y);
                t.data_mut()[y * width + x] = tx;
                t.data_mut()[height * width + y * width + x] = ty;
            }
        }
        FlowField(t)
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn tx(&self) -> &[T] {
        self.0.channel(0)
    }

    pub fn ty(&self) -> &[T] {
        self.0.channel(1)
    }

    pub fn at(&self, x: usize, y: usize) -> (T, T) {
        let i = y * self.width() + x;
        (self.tx()[i], self.ty()[i])
    }

    pub fn as_tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    /// Mean displacement magnitude `|t|` over all pixels.
    pub fn mean_magnitude(&self) -> f64 {
        let n = self.tx().len();
        self.tx()
            .iter()
            .zip(self.ty())
            .map(|(a, b)| {
                let (a, b) = (a.to_f64().unwrap_or(f64::NAN), b.to_f64().unwrap_or(f64::NAN));
                (a * a + b * b).sqrt()
            })
            .sum::<f64>()
            / n as f64
    }
}
