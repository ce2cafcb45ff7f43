use rand::Rng;

use crate::conv_lstm::{ConvLstmCell, ConvLstmState};
use crate::error::{Error, Result};
use crate::flow::{FlowField, HuberPenalty, ThetaRegressor, Warp};
use crate::nn::{Activation, ActivationKind, Conv2d, ConvSpec, Layer, Linear, Param};
use crate::tensor::{Scalar, Tensor};

use super::blocks::{Decoder, Encoder};
use super::config::ModelConfig;

/// Raw output of one prediction before the loss head.
#[derive(Clone, Debug)]
pub(crate) struct StepOutput<T> {
    /// Index of the predicted frame within the input sequence.
    pub target: usize,
    pub logits: Tensor<T>,
    pub flow: Option<FlowField<T>>,
    pub warped: Option<Tensor<T>>,
    /// Weighted smoothness penalty of `flow`.
    pub smoothness: f64,
}

impl<T> StepOutput<T> {
    fn plain(target: usize, logits: Tensor<T>) -> Self {
        StepOutput {
            target,
            logits,
            flow: None,
            warped: None,
            smoothness: 0.0,
        }
    }
}

fn memory_cell<T: Scalar, R: Rng + ?Sized>(
    name: &str,
    din: usize,
    dm: usize,
    k: usize,
    range: f64,
    rng: &mut R,
) -> Result<ConvLstmCell<T>> {
    let mut cell = ConvLstmCell::new(name, din, dm, k)?;
    cell.init_uniform(range, rng);
    Ok(cell)
}

fn zero_state<T: Scalar>(cell: &ConvLstmCell<T>, x: &Tensor<T>) -> ConvLstmState<T> {
    let s = x.shape();
    ConvLstmState::zeros(cell.memory_channels(), s[1], s[2])
}

fn check_grads<T: Scalar>(grads: &[Tensor<T>], expected: usize) -> Result<()> {
    if grads.len() != expected {
        return Err(Error::shape("model backward (number of predictions)", expected, grads.len()));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub(crate) struct FlowNet<T> {
    encoder: Encoder<T>,
    memory: ConvLstmCell<T>,
    theta: ThetaRegressor<T>,
    huber: HuberPenalty<T>,
    warp: Warp<T>,
    decoder: Decoder<T>,
    pending: usize,
}

impl<T: Scalar> FlowNet<T> {
    fn build<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let (c, f, k) = (cfg.channels, cfg.encoder_filters, cfg.encoder_kernel);
        Ok(FlowNet {
            encoder: Encoder::xavier("encoder", c, f, k, rng)?,
            memory: memory_cell("memory", f, cfg.memory_channels, cfg.memory_kernel, cfg.lstm_init_range, rng)?,
            theta: ThetaRegressor::xavier("theta", cfg.memory_channels, cfg.theta_kernel, rng)?,
            huber: HuberPenalty::new(cfg.huber_delta, cfg.huber_weight),
            warp: Warp::new(),
            decoder: Decoder::xavier("decoder", f, c, k, rng)?,
            pending: 0,
        })
    }

    fn forward(&mut self, frames: &[Tensor<T>]) -> Result<Vec<StepOutput<T>>> {
        let mut out = Vec::with_capacity(frames.len() - 1);
        let mut state = None;
        for (t, frame) in frames[..frames.len() - 1].iter().enumerate() {
            let x = self.encoder.forward(frame)?;
            let prev = state.take().unwrap_or_else(|| zero_state(&self.memory, &x));
            let next = self.memory.cell_forward(&x, &prev)?;
            let flow = self.theta.forward(&next.h)?;
            let flow = FlowField::new(self.huber.forward(&flow)?)?;
            let smoothness = self.huber.weight().to_f64().unwrap_or(0.0) * self.huber.penalty(&flow).to_f64().unwrap_or(f64::NAN);
            let warped = self.warp.forward(&x, &flow)?;
            let logits = self.decoder.forward(&warped)?;
            state = Some(next);
            self.pending += 1;
            out.push(StepOutput {
                target: t + 1,
                logits,
                flow: Some(flow),
                warped: Some(warped),
                smoothness,
            });
        }
        Ok(out)
    }

    fn backward(&mut self, grads: &[Tensor<T>]) -> Result<()> {
        check_grads(grads, self.pending)?;
        let mut carry = None;
        for g in grads.iter().rev() {
            let g = self.decoder.backward(g)?;
            let (mut gx, g_flow) = self.warp.backward(&g)?;
            let g_flow = self.huber.backward(&g_flow)?;
            let g_h = self.theta.backward(&g_flow)?;
            gx.add_assign(&self.memory.backward_step(&g_h, &mut carry)?);
            self.encoder.backward(&gx)?;
        }
        self.pending = 0;
        Ok(())
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.encoder.params();
        p.extend(self.memory.params());
        p.extend(self.theta.params());
        p.extend(self.decoder.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.encoder.params_mut();
        p.extend(self.memory.params_mut());
        p.extend(self.theta.params_mut());
        p.extend(self.decoder.params_mut());
        p
    }

    fn clear_cache(&mut self) {
        self.encoder.clear_cache();
        self.memory.clear_cache();
        self.theta.clear_cache();
        self.huber.clear_cache();
        self.warp.clear_cache();
        self.decoder.clear_cache();
        self.pending = 0;
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ConvLstmNet<T> {
    encoder: Encoder<T>,
    memory: ConvLstmCell<T>,
    temporal_decoder: ConvLstmCell<T>,
    decoder: Decoder<T>,
    pending: usize,
}

impl<T: Scalar> ConvLstmNet<T> {
    fn build<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let (c, f, k) = (cfg.channels, cfg.encoder_filters, cfg.encoder_kernel);
        let (dm, km, r) = (cfg.memory_channels, cfg.memory_kernel, cfg.lstm_init_range);
        Ok(ConvLstmNet {
            encoder: Encoder::xavier("encoder", c, f, k, rng)?,
            memory: memory_cell("memory", f, dm, km, r, rng)?,
            temporal_decoder: memory_cell("temporal_decoder", dm, f, km, r, rng)?,
            decoder: Decoder::xavier("decoder", f, c, k, rng)?,
            pending: 0,
        })
    }

    fn forward(&mut self, frames: &[Tensor<T>]) -> Result<Vec<StepOutput<T>>> {
        let mut out = Vec::with_capacity(frames.len() - 1);
        let mut states: Option<(ConvLstmState<T>, ConvLstmState<T>)> = None;
        for (t, frame) in frames[..frames.len() - 1].iter().enumerate() {
            let x = self.encoder.forward(frame)?;
            let (s1, s2) = match states.take() {
                Some(s) => s,
                None => (zero_state(&self.memory, &x), zero_state(&self.temporal_decoder, &x)),
            };
            let s1 = self.memory.cell_forward(&x, &s1)?;
            let s2 = self.temporal_decoder.cell_forward(&s1.h, &s2)?;
            let logits = self.decoder.forward(&s2.h)?;
            states = Some((s1, s2));
            self.pending += 1;
            out.push(StepOutput::plain(t + 1, logits));
        }
        Ok(out)
    }

    fn backward(&mut self, grads: &[Tensor<T>]) -> Result<()> {
        check_grads(grads, self.pending)?;
        let (mut c1, mut c2) = (None, None);
        for g in grads.iter().rev() {
            let g = self.decoder.backward(g)?;
            let g = self.temporal_decoder.backward_step(&g, &mut c2)?;
            let g = self.memory.backward_step(&g, &mut c1)?;
            self.encoder.backward(&g)?;
        }
        self.pending = 0;
        Ok(())
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.encoder.params();
        p.extend(self.memory.params());
        p.extend(self.temporal_decoder.params());
        p.extend(self.decoder.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.encoder.params_mut();
        p.extend(self.memory.params_mut());
        p.extend(self.temporal_decoder.params_mut());
        p.extend(self.decoder.params_mut());
        p
    }

    fn clear_cache(&mut self) {
        self.encoder.clear_cache();
        self.memory.clear_cache();
        self.temporal_decoder.clear_cache();
        self.decoder.clear_cache();
        self.pending = 0;
    }
}

/// Fully-connected LSTMs, expressed as conv-LSTM cells with 1×1 kernels over
/// a 1×1 grid.
#[derive(Clone, Debug)]
pub(crate) struct FcLstmNet<T> {
    encoder: Encoder<T>,
    fc_encoder: ConvLstmCell<T>,
    fc_decoder: ConvLstmCell<T>,
    projection: Linear<T>,
    decoder: Decoder<T>,
    feature_shape: [usize; 3],
    pending: usize,
}

impl<T: Scalar> FcLstmNet<T> {
    fn build<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let (c, f, k) = (cfg.channels, cfg.encoder_filters, cfg.encoder_kernel);
        let (n, hdn, r) = (cfg.feature_len(), cfg.fc_hidden, cfg.lstm_init_range);
        Ok(FcLstmNet {
            encoder: Encoder::xavier("encoder", c, f, k, rng)?,
            fc_encoder: memory_cell("fc_encoder", n, hdn, 1, r, rng)?,
            fc_decoder: memory_cell("fc_decoder", hdn, hdn, 1, r, rng)?,
            projection: Linear::xavier("projection", hdn, n, rng),
            decoder: Decoder::xavier("decoder", f, c, k, rng)?,
            feature_shape: [f, cfg.frame_height / 2, cfg.frame_width / 2],
            pending: 0,
        })
    }

    fn forward(&mut self, frames: &[Tensor<T>]) -> Result<Vec<StepOutput<T>>> {
        let mut out = Vec::with_capacity(frames.len() - 1);
        let hdn = self.fc_encoder.memory_channels();
        let mut states: Option<(ConvLstmState<T>, ConvLstmState<T>)> = None;
        for (t, frame) in frames[..frames.len() - 1].iter().enumerate() {
            let x = self.encoder.forward(frame)?;
            x.expect_shape("fully-connected LSTM features", &self.feature_shape)?;
            let x = x.reshape(&[self.fc_encoder.input_channels(), 1, 1])?;
            let (s1, s2) = states
                .take()
                .unwrap_or_else(|| (ConvLstmState::zeros(hdn, 1, 1), ConvLstmState::zeros(hdn, 1, 1)));
            let s1 = self.fc_encoder.cell_forward(&x, &s1)?;
            let s2 = self.fc_decoder.cell_forward(&s1.h, &s2)?;
            let y = self.projection.forward(&s2.h.clone().reshape(&[hdn])?)?;
            let logits = self.decoder.forward(&y.reshape(&self.feature_shape)?)?;
            states = Some((s1, s2));
            self.pending += 1;
            out.push(StepOutput::plain(t + 1, logits));
        }
        Ok(out)
    }

    fn backward(&mut self, grads: &[Tensor<T>]) -> Result<()> {
        check_grads(grads, self.pending)?;
        let hdn = self.fc_encoder.memory_channels();
        let n = self.fc_encoder.input_channels();
        let (mut c1, mut c2) = (None, None);
        for g in grads.iter().rev() {
            let g = self.decoder.backward(g)?.reshape(&[n])?;
            let g = self.projection.backward(&g)?.reshape(&[hdn, 1, 1])?;
            let g = self.fc_decoder.backward_step(&g, &mut c2)?;
            let g = self.fc_encoder.backward_step(&g, &mut c1)?;
            self.encoder.backward(&g.reshape(&self.feature_shape)?)?;
        }
        self.pending = 0;
        Ok(())
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.encoder.params();
        p.extend(self.fc_encoder.params());
        p.extend(self.fc_decoder.params());
        p.extend(self.projection.params());
        p.extend(self.decoder.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.encoder.params_mut();
        p.extend(self.fc_encoder.params_mut());
        p.extend(self.fc_decoder.params_mut());
        p.extend(self.projection.params_mut());
        p.extend(self.decoder.params_mut());
        p
    }

    fn clear_cache(&mut self) {
        self.encoder.clear_cache();
        self.fc_encoder.clear_cache();
        self.fc_decoder.clear_cache();
        self.projection.clear_cache();
        self.decoder.clear_cache();
        self.pending = 0;
    }
}

/// The last `t_in` frames enter as channels of a single image.
#[derive(Clone, Debug)]
pub(crate) struct ConvNet<T> {
    encoder: Encoder<T>,
    conv2: Conv2d<T>,
    act2: Activation<T>,
    conv3: Conv2d<T>,
    act3: Activation<T>,
    decoder: Decoder<T>,
    t_in: usize,
    pending: usize,
}

impl<T: Scalar> ConvNet<T> {
    fn build<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let (c, f, k, m) = (cfg.channels, cfg.encoder_filters, cfg.encoder_kernel, cfg.conv_hidden);
        Ok(ConvNet {
            encoder: Encoder::xavier("encoder", cfg.t_in * c, f, k, rng)?,
            conv2: Conv2d::xavier("conv2", ConvSpec::same(f, m, k, true), rng)?,
            act2: Activation::new(ActivationKind::Tanh),
            conv3: Conv2d::xavier("conv3", ConvSpec::same(m, f, k, true), rng)?,
            act3: Activation::new(ActivationKind::Tanh),
            decoder: Decoder::xavier("decoder", f, c, k, rng)?,
            t_in: cfg.t_in,
            pending: 0,
        })
    }

    fn forward(&mut self, frames: &[Tensor<T>]) -> Result<Vec<StepOutput<T>>> {
        if frames.len() <= self.t_in {
            return Err(Error::InvalidArgument(format!(
                "convolutional predictor needs more than {} frames, got {}",
                self.t_in,
                frames.len()
            )));
        }
        let s = frames[0].shape();
        let mut out = Vec::with_capacity(frames.len() - self.t_in);
        for target in self.t_in..frames.len() {
            let stacked = Tensor::stack(&frames[target - self.t_in..target])?.reshape(&[self.t_in * s[0], s[1], s[2]])?;
            let a = self.encoder.forward(&stacked)?;
            let a = self.conv2.forward(&a)?;
            let a = self.act2.forward(&a)?;
            let a = self.conv3.forward(&a)?;
            let a = self.act3.forward(&a)?;
            let logits = self.decoder.forward(&a)?;
            self.pending += 1;
            out.push(StepOutput::plain(target, logits));
        }
        Ok(out)
    }

    fn backward(&mut self, grads: &[Tensor<T>]) -> Result<()> {
        check_grads(grads, self.pending)?;
        for g in grads.iter().rev() {
            let g = self.decoder.backward(g)?;
            let g = self.act3.backward(&g)?;
            let g = self.conv3.backward(&g)?;
            let g = self.act2.backward(&g)?;
            let g = self.conv2.backward(&g)?;
            self.encoder.backward(&g)?;
        }
        self.pending = 0;
        Ok(())
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.encoder.params();
        p.extend(self.conv2.params());
        p.extend(self.conv3.params());
        p.extend(self.decoder.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.encoder.params_mut();
        p.extend(self.conv2.params_mut());
        p.extend(self.conv3.params_mut());
        p.extend(self.decoder.params_mut());
        p
    }

    fn clear_cache(&mut self) {
        self.encoder.clear_cache();
        self.conv2.clear_cache();
        self.act2.clear_cache();
        self.conv3.clear_cache();
        self.act3.clear_cache();
        self.decoder.clear_cache();
        self.pending = 0;
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Network<T> {
    Conv(ConvNet<T>),
    FcLstm(FcLstmNet<T>),
    ConvLstm(ConvLstmNet<T>),
    Flow(FlowNet<T>),
}

macro_rules! dispatch {
    ($self:expr, $net:ident => $body:expr) => {
        match $self {
            Network::Conv($net) => $body,
            Network::FcLstm($net) => $body,
            Network::ConvLstm($net) => $body,
            Network::Flow($net) => $body,
        }
    };
}

impl<T: Scalar> Network<T> {
    pub fn build<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        use super::Architecture::*;
        Ok(match cfg.arch {
            AeConv => Network::Conv(ConvNet::build(cfg, rng)?),
            AeFcLstm => Network::FcLstm(FcLstmNet::build(cfg, rng)?),
            AeConvLstm => Network::ConvLstm(ConvLstmNet::build(cfg, rng)?),
            AeConvLstmFlow => Network::Flow(FlowNet::build(cfg, rng)?),
        })
    }

    pub fn forward(&mut self, frames: &[Tensor<T>]) -> Result<Vec<StepOutput<T>>> {
        dispatch!(self, n => n.forward(frames))
    }

    pub fn backward(&mut self, grads: &[Tensor<T>]) -> Result<()> {
        dispatch!(self, n => n.backward(grads))
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        dispatch!(self, n => n.params())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        dispatch!(self, n => n.params_mut())
    }

    pub fn clear_cache(&mut self) {
        dispatch!(self, n => n.clear_cache())
    }

    pub fn set_huber_weight(&mut self, weight: f64) {
        if let Network::Flow(n) = self {
            n.huber.set_weight(weight);
        }
    }
}
