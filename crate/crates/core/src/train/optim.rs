use crate::error::{Error, Result};
use crate::nn::Param;
use crate::tensor::{Scalar, Tensor};

/// `initial · decay^⌊(epoch − 1) / every⌋` for 1-based `epoch`.
pub fn lr_schedule(epoch: usize, initial: f64, decay: f64, every: usize) -> f64 {
    let e = epoch.max(1);
    initial * decay.powi(((e - 1) / every.max(1)) as i32)
}

/// Elementwise clamp of every gradient to `[lo, hi]`.
pub fn clip_gradients<T: Scalar>(params: &mut [&mut Param<T>], lo: f64, hi: f64) {
    let (lo, hi) = (T::from_f64_lossy(lo), T::from_f64_lossy(hi));
    for p in params.iter_mut() {
        for g in p.grad.data_mut() {
            *g = g.max(lo).min(hi);
        }
    }
}

/// Per-parameter mean-square accumulators of RMSprop.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T> {
    pub msq: Vec<(String, Tensor<T>)>,
    pub step: u64,
    pub lr: f64,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(params: &[&Param<T>], lr: f64) -> Self {
        OptimState {
            msq: params.iter().map(|p| (p.name.clone(), Tensor::zeros(p.value.shape()))).collect(),
            step: 0,
            lr,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmsProp {
    pub alpha: f64,
    pub epsilon: f64,
}

impl Default for RmsProp {
    fn default() -> Self {
        RmsProp { alpha: 0.99, epsilon: 1e-8 }
    }
}

impl RmsProp {
    /// `m ← α·m + (1−α)·g²; θ ← θ − lr·g/(√m + ε)`. Every gradient is checked
    /// before anything is modified, so a non-finite gradient leaves both the
    /// parameters and the state untouched.
    pub fn step<T: Scalar>(&self, params: &mut [&mut Param<T>], state: &mut OptimState<T>) -> Result<()> {
        if params.len() != state.msq.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} tensors, model has {}",
                state.msq.len(),
                params.len()
            )));
        }
        for (p, (name, m)) in params.iter().zip(&state.msq) {
            if p.name != *name || p.grad.shape() != m.shape() {
                return Err(Error::InvalidArgument(format!(
                    "optimizer state {name} {:?} does not match parameter {} {:?}",
                    m.shape(),
                    p.name,
                    p.grad.shape()
                )));
            }
            if !p.grad.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)));
            }
        }
        let alpha = T::from_f64_lossy(self.alpha);
        let one_minus = T::from_f64_lossy(1.0 - self.alpha);
        let eps = T::from_f64_lossy(self.epsilon);
        let lr = T::from_f64_lossy(state.lr);
        for (p, (_, m)) in params.iter_mut().zip(state.msq.iter_mut()) {
            let Param { value, grad, .. } = &mut **p;
            for ((v, &g), mv) in value.data_mut().iter_mut().zip(grad.data()).zip(m.data_mut()) {
                *mv = alpha * *mv + one_minus * g * g;
                *v -= lr * g / (mv.sqrt() + eps);
            }
        }
        state.step += 1;
        Ok(())
    }
}
