use super::Layer;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
struct PoolCache {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

/// 2×2 max-pooling with subsampling. Ties resolve to the first window
/// position in row-major order.
#[derive(Clone, Debug, Default)]
pub struct MaxPool2x2 {
    caches: Vec<PoolCache>,
}

impl MaxPool2x2 {
    pub fn new() -> Self {
        Self::default()
    }

    /// Pooled output together with the flat input index chosen for each output.
    pub fn pool<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
        let shape = input.shape();
        if shape.len() != 3 {
            return Err(Error::shape("maxpool input (rank)", 3, shape.len()));
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "maxpool needs even spatial extent, got {h}×{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros(&[c, oh, ow]);
        let mut argmax = vec![0usize; c * oh * ow];
        let src = input.data();
        let dst = out.data_mut();
        for ch in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    let base = ch * h * w + 2 * y * w + 2 * x;
                    let mut best = base;
                    for cand in [base + 1, base + w, base + w + 1] {
                        if src[cand] > src[best] {
                            best = cand;
                        }
                    }
                    let o = (ch * oh + y) * ow + x;
                    dst[o] = src[best];
                    argmax[o] = best;
                }
            }
        }
        Ok((out, argmax))
    }
}

impl<T: Scalar> Layer<T> for MaxPool2x2 {
    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (out, argmax) = Self::pool(input)?;
        self.caches.push(PoolCache {
            input_shape: input.shape().to_vec(),
            argmax,
        });
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.caches.pop().ok_or(Error::NoCache("maxpool2x2"))?;
        let s = &cache.input_shape;
        grad_out.expect_shape("maxpool grad_out", &[s[0], s[1] / 2, s[2] / 2])?;
        let mut grad_in = Tensor::zeros(s);
        let gi = grad_in.data_mut();
        for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
            gi[idx] += g;
        }
        Ok(grad_in)
    }

    fn clear_cache(&mut self) {
        self.caches.clear();
    }
}
