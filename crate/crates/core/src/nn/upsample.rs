use super::Layer;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Nearest-neighbour 2× spatial upsampling: `out[c,y,x] = in[c,y/2,x/2]`.
#[derive(Clone, Debug, Default)]
pub struct UpsampleNearest2x {
    shapes: Vec<Vec<usize>>,
}

impl UpsampleNearest2x {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn upsample<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
        let s = input.shape();
        let (c, h, w) = (s[0], s[1], s[2]);
        let mut out = Tensor::zeros(&[c, 2 * h, 2 * w]);
        let src = input.data();
        let dst = out.data_mut();
        for ch in 0..c {
            for y in 0..2 * h {
                let row = &src[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
                let out_row = &mut dst[(ch * 2 * h + y) * 2 * w..(ch * 2 * h + y + 1) * 2 * w];
                for (x, v) in out_row.iter_mut().enumerate() {
                    *v = row[x / 2];
                }
            }
        }
        out
    }

    /// Adjoint: sums each 2×2 block of `grad_out`.
    pub fn downsample_sum<T: Scalar>(grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let s = grad_out.shape();
        if s.len() != 3 || s[1] % 2 != 0 || s[2] % 2 != 0 {
            return Err(Error::shape("upsample grad_out", "C×2h×2w", s));
        }
        let (c, h, w) = (s[0], s[1] / 2, s[2] / 2);
        let mut grad_in = Tensor::zeros(&[c, h, w]);
        let src = grad_out.data();
        let dst = grad_in.data_mut();
        for ch in 0..c {
            for y in 0..2 * h {
                for x in 0..2 * w {
                    dst[(ch * h + y / 2) * w + x / 2] += src[(ch * 2 * h + y) * 2 * w + x];
                }
            }
        }
        Ok(grad_in)
    }
}

impl<T: Scalar> Layer<T> for UpsampleNearest2x {
    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        if input.shape().len() != 3 {
            return Err(Error::shape("upsample input (rank)", 3, input.shape().len()));
        }
        self.shapes.push(input.shape().to_vec());
        Ok(Self::upsample(input))
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let s = self.shapes.pop().ok_or(Error::NoCache("upsample"))?;
        grad_out.expect_shape("upsample grad_out", &[s[0], 2 * s[1], 2 * s[2]])?;
        Self::downsample_sum(grad_out)
    }

    fn clear_cache(&mut self) {
        self.shapes.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MaxPool2x2;

    #[test]
    fn duplicates_pixels() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let y = UpsampleNearest2x::upsample(&x);
        assert_eq!(
            y.data(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
    }

    #[test]
    fn backward_sums_blocks() {
        let mut up = UpsampleNearest2x::new();
        up.forward(&Tensor::<f64>::zeros(&[3, 2, 5])).unwrap();
        let g = up.backward(&Tensor::full(&[3, 4, 10], 1.0)).unwrap();
        assert_eq!(g.shape(), &[3, 2, 5]);
        assert!(g.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn round_trip_shape_with_pool() {
        let x = Tensor::<f32>::zeros(&[4, 6, 8]);
        let (p, _) = MaxPool2x2::pool(&x).unwrap();
        assert_eq!(UpsampleNearest2x::upsample(&p).shape(), x.shape());
    }
}
