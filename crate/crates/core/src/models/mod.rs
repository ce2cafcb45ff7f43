//! The four next-frame predictors and their training objectives.
//!
//! Every architecture maps frames `Y_1..Y_T` to predictions of later frames.
//! Recurrent models predict `Y_{t+1}` from `Y_1..Y_t` for every transition;
//! the convolutional baseline predicts each frame from the `t_in` frames
//! before it.

mod arch;
mod blocks;
mod config;
mod loss;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use blocks::{Decoder, Encoder};
pub use config::{Architecture, ModelConfig};
pub use loss::{
    bce_logit_gradient, l2_gradient, loss_bce, loss_l2, loss_l2_huber, mean_abs_error, LossKind, BCE_CLAMP,
};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::nn::gradcheck::Checkable;
use crate::nn::Param;
use crate::tensor::{Scalar, Tensor};
use arch::Network;

/// One predicted frame together with its intermediate quantities.
#[derive(Clone, Debug)]
pub struct PredictionResult<T> {
    /// Index of the predicted frame in the input sequence.
    pub target_index: usize,
    /// Predicted frame, `C × H × W`.
    pub frame: Tensor<T>,
    /// Predicted flow at feature resolution, flow model only.
    pub flow: Option<FlowField<T>>,
    /// Encoder features of the current frame after warping, flow model only.
    pub warped: Option<Tensor<T>>,
    /// Summed data loss against the target frame.
    pub data_loss: f64,
    /// Weighted smoothness penalty of the flow.
    pub smoothness: f64,
}

/// Loss totals of one sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SequenceLoss {
    /// Summed data loss over all predictions.
    pub data: f64,
    /// Summed weighted smoothness penalty.
    pub smoothness: f64,
    /// Data loss of the final prediction alone.
    pub last_data: f64,
    /// Mean absolute error of the final prediction, per pixel.
    pub last_mae: f64,
    pub predictions: usize,
    /// Values per frame.
    pub frame_len: usize,
}

impl SequenceLoss {
    pub fn total(&self) -> f64 {
        self.data + self.smoothness
    }

    fn pixels(&self) -> f64 {
        (self.predictions * self.frame_len).max(1) as f64
    }

    pub fn data_per_pixel(&self) -> f64 {
        self.data / self.pixels()
    }

    pub fn smoothness_per_pixel(&self) -> f64 {
        self.smoothness / self.pixels()
    }

    pub fn last_per_pixel(&self) -> f64 {
        self.last_data / self.frame_len.max(1) as f64
    }
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ModelConfig,
    net: Network<T>,
}

impl<T: Scalar> Model<T> {
    /// Builds a model with Xavier-initialised convolutions and uniformly
    /// initialised LSTM weights, deterministically from `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::build(&config, &mut rng)?;
        Ok(Model { config, net })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.net.params_mut()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    /// Drops the forward caches of an unfinished pass.
    pub fn clear_cache(&mut self) {
        self.net.clear_cache();
    }

    pub fn set_huber_weight(&mut self, weight: f64) {
        self.config.huber_weight = weight;
        self.net.set_huber_weight(weight);
    }

    /// Sets every parameter whose name starts with `prefix` to zero and
    /// returns how many tensors were affected.
    pub fn zero_parameters(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for p in self.params_mut() {
            if p.name.starts_with(prefix) {
                p.value.fill(T::zero());
                n += 1;
            }
        }
        n
    }

    fn check_frames(&self, frames: &[Tensor<T>]) -> Result<()> {
        let need = if self.config.arch.is_recurrent() { 2 } else { self.config.t_in + 1 };
        if frames.len() < need {
            return Err(Error::InvalidArgument(format!(
                "{} needs at least {need} frames, got {}",
                self.config.arch,
                frames.len()
            )));
        }
        let s = frames[0].shape();
        if s.len() != 3 || s[0] != self.config.channels || s[1] % 2 != 0 || s[2] % 2 != 0 {
            return Err(Error::shape(
                "model input frame (channels × even height × even width)",
                [self.config.channels, self.config.frame_height, self.config.frame_width],
                s,
            ));
        }
        if self.config.arch == Architecture::AeFcLstm && (s[1], s[2]) != (self.config.frame_height, self.config.frame_width) {
            return Err(Error::shape(
                "fully-connected model frame extent",
                [self.config.frame_height, self.config.frame_width],
                &s[1..],
            ));
        }
        for f in frames {
            f.expect_shape("model input frame", s)?;
        }
        Ok(())
    }

    fn run(&mut self, frames: &[Tensor<T>]) -> Result<(Vec<PredictionResult<T>>, Vec<Tensor<T>>)> {
        self.check_frames(frames)?;
        self.net.clear_cache();
        let steps = self.net.forward(frames)?;
        let loss = self.config.loss;
        let mut results = Vec::with_capacity(steps.len());
        let mut grads = Vec::with_capacity(steps.len());
        for s in steps {
            let frame = loss.head(&s.logits);
            let (data_loss, grad) = loss.evaluate(&frame, &frames[s.target])?;
            grads.push(grad);
            results.push(PredictionResult {
                target_index: s.target,
                frame,
                flow: s.flow,
                warped: s.warped,
                data_loss,
                smoothness: s.smoothness,
            });
        }
        Ok((results, grads))
    }

    /// Predictions for every transition of `frames`, without keeping any
    /// state for a backward pass.
    pub fn forward_sequence(&mut self, frames: &[Tensor<T>]) -> Result<Vec<PredictionResult<T>>> {
        let out = self.run(frames);
        self.net.clear_cache();
        Ok(out?.0)
    }

    /// Losses of a sequence plus the accumulation of their gradients into
    /// every parameter.
    pub fn loss_and_backward(&mut self, frames: &[Tensor<T>]) -> Result<SequenceLoss> {
        let (results, grads) = match self.run(frames) {
            Ok(r) => r,
            Err(e) => {
                self.net.clear_cache();
                return Err(e);
            }
        };
        let summary = summarize(&results, frames)?;
        if let Err(e) = self.net.backward(&grads) {
            self.net.clear_cache();
            return Err(e);
        }
        Ok(summary)
    }

    /// Losses of a sequence without differentiation.
    pub fn evaluate(&mut self, frames: &[Tensor<T>]) -> Result<SequenceLoss> {
        let results = self.forward_sequence(frames)?;
        summarize(&results, frames)
    }
}

fn summarize<T: Scalar>(results: &[PredictionResult<T>], frames: &[Tensor<T>]) -> Result<SequenceLoss> {
    let last = results
        .last()
        .ok_or_else(|| Error::InvalidArgument("sequence produced no predictions".into()))?;
    Ok(SequenceLoss {
        data: results.iter().map(|r| r.data_loss).sum(),
        smoothness: results.iter().map(|r| r.smoothness).sum(),
        last_data: last.data_loss,
        last_mae: mean_abs_error(&last.frame, &frames[last.target_index])?,
        predictions: results.len(),
        frame_len: frames[0].len(),
    })
}

/// Finite-difference probe of a whole model under its training objective.
pub struct ModelCheck {
    model: Model<f64>,
    frames: Vec<Tensor<f64>>,
}

impl ModelCheck {
    pub fn new(model: Model<f64>, frames: Vec<Tensor<f64>>) -> Self {
        ModelCheck { model, frames }
    }

    /// A probe whose frames are the model's own rollout from random seed
    /// frames plus uniform noise of amplitude `noise`, so residuals stay small
    /// while Jacobians keep their natural scale. Every parameter is first
    /// redrawn from `U(−weight_range, weight_range)`.
    pub fn rollout(mut model: Model<f64>, length: usize, weight_range: f64, noise: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in model.params_mut() {
            p.value = crate::nn::init::uniform(p.value.shape(), -weight_range, weight_range, &mut rng);
        }
        let c = model.config().clone();
        let shape = [c.channels, c.frame_height, c.frame_width];
        let warm = if c.arch.is_recurrent() { 1 } else { c.t_in };
        let mut frames: Vec<Tensor<f64>> = (0..warm.min(length))
            .map(|_| crate::nn::init::uniform(&shape, 0.0, 1.0, &mut rng))
            .collect();
        while frames.len() < length {
            let mut input = frames.clone();
            input.push(frames[frames.len() - 1].clone());
            let predicted = model
                .forward_sequence(&input)?
                .pop()
                .ok_or_else(|| Error::InvalidArgument("rollout produced no prediction".into()))?
                .frame;
            let jitter: Tensor<f64> = crate::nn::init::uniform(&shape, -noise, noise, &mut rng);
            let mut next = predicted.zip_map(&jitter, |p, j| p + j);
            if c.loss == LossKind::Bce {
                next = next.map(|v| v.clamp(0.0, 1.0));
            }
            frames.push(next);
        }
        Ok(ModelCheck { model, frames })
    }

    pub fn model(&self) -> &Model<f64> {
        &self.model
    }

    pub fn frames(&self) -> &[Tensor<f64>] {
        &self.frames
    }
}

impl Checkable for ModelCheck {
    fn tensor_names(&self) -> Vec<String> {
        self.model.params().iter().map(|p| p.name.clone()).collect()
    }

    fn tensor_mut(&mut self, index: usize) -> &mut Tensor<f64> {
        &mut self.model.params_mut().swap_remove(index).value
    }

    fn loss(&mut self) -> Result<f64> {
        Ok(self.model.evaluate(&self.frames)?.total())
    }

    fn gradients(&mut self) -> Result<Vec<Tensor<f64>>> {
        self.model.zero_grad();
        self.model.loss_and_backward(&self.frames)?;
        Ok(self.model.params().iter().map(|p| p.grad.clone()).collect())
    }
}
