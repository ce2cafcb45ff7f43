//! Convolutional LSTM memory and its unrolled sequence driver.
//!
//! Gates at step `t` (biases broadcast over the spatial grid, `∗` a
//! same-padded convolution):
//!
//! ```text
//! i_t = σ(x_t ∗ w_xi + h_{t−1} ∗ w_hi + b_i)
//! f_t = σ(x_t ∗ w_xf + h_{t−1} ∗ w_hf + b_f)
//! g_t = tanh(x_t ∗ w_xc + h_{t−1} ∗ w_hc + b_c)
//! c_t = g_t ⊙ i_t + c_{t−1} ⊙ f_t
//! o_t = σ(x_t ∗ w_xo + h_{t−1} ∗ w_ho + b_o)
//! h_t = o_t ⊙ tanh(c_t)
//! ```
//!
//! All eight gate convolutions are evaluated as one matrix product over the
//! stacked unfolding of `[x_t; h_{t−1}]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::gradcheck::Checkable;
use crate::nn::{col2im_add, im2col, init, sigmoid, Param};
use crate::tensor::{Scalar, Tensor};

const GATES: [&str; 4] = ["i", "f", "c", "o"];
const INPUT: usize = 0;
const FORGET: usize = 1;
const CANDIDATE: usize = 2;
const OUTPUT: usize = 3;

/// Cell memory `c` and output `h`, both `d_m × h × w`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmState<T> {
    pub c: Tensor<T>,
    pub h: Tensor<T>,
}

impl<T: Scalar> ConvLstmState<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        ConvLstmState {
            c: Tensor::zeros(&[channels, height, width]),
            h: Tensor::zeros(&[channels, height, width]),
        }
    }
}

/// Gradient flowing into a step from its successor.
#[derive(Clone, Debug)]
pub struct StateGrad<T> {
    pub c: Tensor<T>,
    pub h: Tensor<T>,
}

#[derive(Clone, Debug)]
struct StepCache<T> {
    x: Tensor<T>,
    h_prev: Tensor<T>,
    c_prev: Tensor<T>,
    /// Post-activation gates, `4·d_m × h·w` in `GATES` order.
    gates: Vec<T>,
    c: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct ConvLstmCell<T> {
    input_channels: usize,
    memory_channels: usize,
    kernel: usize,
    w_x: Vec<Param<T>>,
    w_h: Vec<Param<T>>,
    bias: Vec<Param<T>>,
    steps: Vec<StepCache<T>>,
}

impl<T: Scalar> ConvLstmCell<T> {
    /// Zero-initialised cell.
    pub fn new(name: &str, input_channels: usize, memory_channels: usize, kernel: usize) -> Result<Self> {
        if kernel % 2 == 0 || input_channels == 0 || memory_channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv-LSTM needs an odd kernel and positive channels, got d_in={input_channels} d_m={memory_channels} K={kernel}"
            )));
        }
        let make = |prefix: &str, cin: usize| -> Vec<Param<T>> {
            GATES
                .iter()
                .map(|g| {
                    Param::new(
                        format!("{name}.w_{prefix}{g}"),
                        Tensor::zeros(&[memory_channels, cin, kernel, kernel]),
                    )
                })
                .collect()
        };
        Ok(ConvLstmCell {
            input_channels,
            memory_channels,
            kernel,
            w_x: make("x", input_channels),
            w_h: make("h", memory_channels),
            bias: GATES
                .iter()
                .map(|g| Param::new(format!("{name}.b_{g}"), Tensor::zeros(&[memory_channels])))
                .collect(),
            steps: Vec::new(),
        })
    }

    /// Weights from `U(−range, range)`, forget-gate bias 1, other biases 0.
    pub fn init_uniform<R: Rng + ?Sized>(&mut self, range: f64, rng: &mut R) {
        for p in self.w_x.iter_mut().chain(self.w_h.iter_mut()) {
            p.value = init::uniform(p.value.shape(), -range, range, rng);
        }
        for (g, b) in self.bias.iter_mut().enumerate() {
            b.value.fill(if g == FORGET { T::one() } else { T::zero() });
        }
    }

    /// `4 · (d_m·d_in·K² + d_m·d_m·K² + d_m)`.
    pub fn param_count(input_channels: usize, memory_channels: usize, kernel: usize) -> usize {
        let k2 = kernel * kernel;
        4 * (memory_channels * input_channels * k2 + memory_channels * memory_channels * k2 + memory_channels)
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn memory_channels(&self) -> usize {
        self.memory_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.w_x.iter().zip(&self.w_h).flat_map(|(a, b)| [a, b]).chain(&self.bias).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.w_x
            .iter_mut()
            .zip(self.w_h.iter_mut())
            .flat_map(|(a, b)| [a, b])
            .chain(self.bias.iter_mut())
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn gate_bias_mut(&mut self, gate: usize) -> &mut Param<T> {
        &mut self.bias[gate]
    }

    pub fn cached_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn clear_cache(&mut self) {
        self.steps.clear();
    }

    fn kx(&self) -> usize {
        self.input_channels * self.kernel * self.kernel
    }

    fn kh(&self) -> usize {
        self.memory_channels * self.kernel * self.kernel
    }

    /// Packs the eight gate kernels into one `4·d_m × (d_in + d_m)·K²` matrix.
    fn packed_weights(&self) -> Vec<T> {
        let (kx, kh) = (self.kx(), self.kh());
        let cols = kx + kh;
        let mut packed = vec![T::zero(); 4 * self.memory_channels * cols];
        for g in 0..4 {
            let wx = self.w_x[g].value.data();
            let wh = self.w_h[g].value.data();
            for o in 0..self.memory_channels {
                let row = &mut packed[(g * self.memory_channels + o) * cols..][..cols];
                row[..kx].copy_from_slice(&wx[o * kx..(o + 1) * kx]);
                row[kx..].copy_from_slice(&wh[o * kh..(o + 1) * kh]);
            }
        }
        packed
    }

    fn unfold(&self, x: &Tensor<T>, h_prev: &Tensor<T>, height: usize, width: usize) -> Vec<T> {
        let hw = height * width;
        let p = self.kernel / 2;
        let mut col = vec![T::zero(); (self.kx() + self.kh()) * hw];
        let (cx, ch) = col.split_at_mut(self.kx() * hw);
        im2col(x.data(), self.input_channels, height, width, self.kernel, self.kernel, p, p, cx);
        im2col(h_prev.data(), self.memory_channels, height, width, self.kernel, self.kernel, p, p, ch);
        col
    }

    /// One step of the recurrence; caches activations for `backward_step`.
    pub fn cell_forward(&mut self, x: &Tensor<T>, state: &ConvLstmState<T>) -> Result<ConvLstmState<T>> {
        if x.shape().len() != 3 {
            return Err(Error::shape("conv-LSTM input (rank)", 3, x.shape().len()));
        }
        if x.shape()[0] != self.input_channels {
            return Err(Error::shape(
                "conv-LSTM input (dimension 0, channels)",
                self.input_channels,
                x.shape()[0],
            ));
        }
        let (height, width) = (x.shape()[1], x.shape()[2]);
        let state_shape = [self.memory_channels, height, width];
        state.h.expect_shape("conv-LSTM state h", &state_shape)?;
        state.c.expect_shape("conv-LSTM state c", &state_shape)?;

        let hw = height * width;
        let dm = self.memory_channels;
        let col = self.unfold(x, &state.h, height, width);
        let packed = self.packed_weights();
        let mut gates = vec![T::zero(); 4 * dm * hw];
        for g in 0..4 {
            for (o, &b) in self.bias[g].value.data().iter().enumerate() {
                gates[(g * dm + o) * hw..][..hw].fill(b);
            }
        }
        T::gemm(4 * dm, self.kx() + self.kh(), hw, &packed, false, &col, false, T::one(), &mut gates);

        let (acts, rest) = gates.split_at_mut(dm * hw);
        let (forget, rest) = rest.split_at_mut(dm * hw);
        let (cand, output) = rest.split_at_mut(dm * hw);
        acts.iter_mut().for_each(|v| *v = sigmoid(*v));
        forget.iter_mut().for_each(|v| *v = sigmoid(*v));
        cand.iter_mut().for_each(|v| *v = v.tanh());
        output.iter_mut().for_each(|v| *v = sigmoid(*v));

        let mut c = Tensor::zeros(&state_shape);
        let mut h = Tensor::zeros(&state_shape);
        for (k, ((cv, hv), &cp)) in c
            .data_mut()
            .iter_mut()
            .zip(h.data_mut().iter_mut())
            .zip(state.c.data())
            .enumerate()
        {
            *cv = cand[k] * acts[k] + cp * forget[k];
            *hv = output[k] * cv.tanh();
        }
        self.steps.push(StepCache {
            x: x.clone(),
            h_prev: state.h.clone(),
            c_prev: state.c.clone(),
            gates,
            c: c.clone(),
        });
        Ok(ConvLstmState { c, h })
    }

    /// Reverse-mode step. `grad_h` is the gradient reaching `h_t` from outside
    /// the recurrence; `carry` holds the gradient w.r.t. `(c_t, h_t)` coming
    /// from step `t+1` and is replaced by the gradient w.r.t. `(c_{t−1},
    /// h_{t−1})`. Returns the gradient w.r.t. `x_t`.
    pub fn backward_step(&mut self, grad_h: &Tensor<T>, carry: &mut Option<StateGrad<T>>) -> Result<Tensor<T>> {
        let step = self.steps.pop().ok_or(Error::NoCache("conv-LSTM cell"))?;
        grad_h.expect_shape("conv-LSTM grad_h", step.c.shape())?;
        let height = step.c.shape()[1];
        let width = step.c.shape()[2];
        let hw = height * width;
        let dm = self.memory_channels;
        let n = dm * hw;

        let gates = &step.gates;
        let (i_g, f_g, g_g, o_g) = (&gates[..n], &gates[n..2 * n], &gates[2 * n..3 * n], &gates[3 * n..]);
        let mut dz = vec![T::zero(); 4 * n];
        let mut dc_prev = Tensor::zeros(step.c.shape());
        let c = step.c.data();
        let c_prev = step.c_prev.data();
        let one = T::one();
        for k in 0..n {
            let (carry_h, carry_c) = match carry {
                Some(sg) => (sg.h.data()[k], sg.c.data()[k]),
                None => (T::zero(), T::zero()),
            };
            let dh = grad_h.data()[k] + carry_h;
            let tc = c[k].tanh();
            let d_o = dh * tc;
            let dc = carry_c + dh * o_g[k] * (one - tc * tc);
            let d_i = dc * g_g[k];
            let d_g = dc * i_g[k];
            let d_f = dc * c_prev[k];
            dc_prev.data_mut()[k] = dc * f_g[k];
            dz[INPUT * n + k] = d_i * i_g[k] * (one - i_g[k]);
            dz[FORGET * n + k] = d_f * f_g[k] * (one - f_g[k]);
            dz[CANDIDATE * n + k] = d_g * (one - g_g[k] * g_g[k]);
            dz[OUTPUT * n + k] = d_o * o_g[k] * (one - o_g[k]);
        }

        let (kx, kh) = (self.kx(), self.kh());
        let cols = kx + kh;
        let mut col = self.unfold(&step.x, &step.h_prev, height, width);

        let mut grad_packed = vec![T::zero(); 4 * dm * cols];
        T::gemm(4 * dm, hw, cols, &dz, false, &col, true, T::zero(), &mut grad_packed);
        for g in 0..4 {
            let gx = self.w_x[g].grad.data_mut();
            for o in 0..dm {
                let row = &grad_packed[(g * dm + o) * cols..][..cols];
                for (d, &s) in gx[o * kx..(o + 1) * kx].iter_mut().zip(&row[..kx]) {
                    *d += s;
                }
            }
            let gh = self.w_h[g].grad.data_mut();
            for o in 0..dm {
                let row = &grad_packed[(g * dm + o) * cols..][..cols];
                for (d, &s) in gh[o * kh..(o + 1) * kh].iter_mut().zip(&row[kx..]) {
                    *d += s;
                }
            }
            let gb = self.bias[g].grad.data_mut();
            for (o, b) in gb.iter_mut().enumerate() {
                *b += dz[(g * dm + o) * hw..][..hw].iter().copied().sum::<T>();
            }
        }

        let packed = self.packed_weights();
        T::gemm(cols, 4 * dm, hw, &packed, true, &dz, false, T::zero(), &mut col);
        let p = self.kernel / 2;
        let mut grad_x = Tensor::zeros(step.x.shape());
        let mut grad_h_prev = Tensor::zeros(step.h_prev.shape());
        let (cx, ch) = col.split_at(kx * hw);
        col2im_add(cx, self.input_channels, height, width, self.kernel, self.kernel, p, p, grad_x.data_mut());
        col2im_add(ch, dm, height, width, self.kernel, self.kernel, p, p, grad_h_prev.data_mut());
        *carry = Some(StateGrad {
            c: dc_prev,
            h: grad_h_prev,
        });
        Ok(grad_x)
    }

    /// Runs the recurrence over `inputs`, starting from `initial` (zeros when
    /// `None`). Returns every `h_t` and the final state.
    pub fn sequence_forward(
        &mut self,
        inputs: &[Tensor<T>],
        initial: Option<ConvLstmState<T>>,
    ) -> Result<(Vec<Tensor<T>>, ConvLstmState<T>)> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::InvalidArgument("conv-LSTM sequence must not be empty".into()))?;
        for x in inputs {
            x.expect_shape("conv-LSTM sequence input", first.shape())?;
        }
        let mut state = match initial {
            Some(s) => s,
            None => {
                let s = first.shape();
                if s.len() != 3 {
                    return Err(Error::shape("conv-LSTM input (rank)", 3, s.len()));
                }
                ConvLstmState::zeros(self.memory_channels, s[1], s[2])
            }
        };
        let mut outputs = Vec::with_capacity(inputs.len());
        for x in inputs {
            state = self.cell_forward(x, &state)?;
            outputs.push(state.h.clone());
        }
        Ok((outputs, state))
    }

    /// Backpropagation through the cached steps; `grad_outputs[t]` is the
    /// gradient w.r.t. `h_t`. Returns the gradients w.r.t. each input.
    pub fn sequence_backward(&mut self, grad_outputs: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        if grad_outputs.len() != self.steps.len() {
            return Err(Error::shape(
                "conv-LSTM sequence_backward (number of steps)",
                self.steps.len(),
                grad_outputs.len(),
            ));
        }
        let mut carry = None;
        let mut grads: Vec<Tensor<T>> = grad_outputs
            .iter()
            .rev()
            .map(|g| self.backward_step(g, &mut carry))
            .collect::<Result<_>>()?;
        grads.reverse();
        Ok(grads)
    }
}

/// Finite-difference probe for a cell unrolled over a sequence under the loss
/// `Σ_t Σ r_t ⊙ h_t`.
pub struct SequenceCheck {
    pub cell: ConvLstmCell<f64>,
    pub inputs: Vec<Tensor<f64>>,
    projections: Vec<Tensor<f64>>,
}

impl SequenceCheck {
    pub fn new(cell: ConvLstmCell<f64>, inputs: Vec<Tensor<f64>>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = inputs[0].shape();
        let shape = [cell.memory_channels(), s[1], s[2]];
        let projections = inputs
            .iter()
            .map(|_| Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..1.0)))
            .collect();
        SequenceCheck {
            cell,
            inputs,
            projections,
        }
    }

    /// Random cell and inputs with the given geometry.
    pub fn random(
        input_channels: usize,
        memory_channels: usize,
        kernel: usize,
        size: usize,
        steps: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cell = ConvLstmCell::new("lstm", input_channels, memory_channels, kernel).expect("valid cell");
        for p in cell.params_mut() {
            p.value = init::uniform(p.value.shape(), -0.5, 0.5, &mut rng);
        }
        let inputs = (0..steps)
            .map(|_| init::uniform(&[input_channels, size, size], -1.0, 1.0, &mut rng))
            .collect();
        Self::new(cell, inputs, seed.wrapping_add(1))
    }
}

impl Checkable for SequenceCheck {
    fn tensor_names(&self) -> Vec<String> {
        (0..self.inputs.len())
            .map(|t| format!("x_{}", t + 1))
            .chain(self.cell.params().iter().map(|p| p.name.clone()))
            .collect()
    }

    fn tensor_mut(&mut self, index: usize) -> &mut Tensor<f64> {
        let t = self.inputs.len();
        if index < t {
            &mut self.inputs[index]
        } else {
            self.cell
                .params_mut()
                .into_iter()
                .nth(index - t)
                .map(|p| &mut p.value)
                .expect("parameter index in range")
        }
    }

    fn loss(&mut self) -> Result<f64> {
        let (outs, _) = self.cell.sequence_forward(&self.inputs, None)?;
        self.cell.clear_cache();
        Ok(outs
            .iter()
            .zip(&self.projections)
            .map(|(h, r)| h.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>())
            .sum())
    }

    fn gradients(&mut self) -> Result<Vec<Tensor<f64>>> {
        self.cell.clear_cache();
        for p in self.cell.params_mut() {
            p.zero_grad();
        }
        self.cell.sequence_forward(&self.inputs, None)?;
        let grads = self.cell.sequence_backward(&self.projections)?;
        Ok(grads
            .into_iter()
            .chain(self.cell.params().iter().map(|p| p.grad.clone()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{gradcheck, GradCheckConfig};
    use proptest::prelude::*;

    fn random_cell(din: usize, dm: usize, k: usize, range: f64, seed: u64) -> ConvLstmCell<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cell = ConvLstmCell::new("m", din, dm, k).unwrap();
        for p in cell.params_mut() {
            p.value = init::uniform(p.value.shape(), -range, range, &mut rng);
        }
        cell
    }

    fn random_inputs(din: usize, size: usize, steps: usize, seed: u64) -> Vec<Tensor<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..steps).map(|_| init::uniform(&[din, size, size], -1.0, 1.0, &mut rng)).collect()
    }

    #[test]
    fn zero_cell_gives_half_gates_and_zero_state() {
        let mut cell = ConvLstmCell::<f64>::new("m", 2, 3, 3).unwrap();
        let x = Tensor::full(&[2, 4, 4], 0.7);
        let s = cell.cell_forward(&x, &ConvLstmState::zeros(3, 4, 4)).unwrap();
        assert!(s.c.data().iter().all(|&v| v == 0.0));
        assert!(s.h.data().iter().all(|&v| v == 0.0));
        let gates = &cell.steps[0].gates;
        assert!(gates.iter().enumerate().all(|(k, &g)| {
            let n = 3 * 16;
            if (2 * n..3 * n).contains(&k) {
                g == 0.0
            } else {
                g == 0.5
            }
        }));
    }

    #[test]
    fn forget_bias_carries_memory() {
        let mut cell = ConvLstmCell::<f64>::new("m", 1, 1, 3).unwrap();
        cell.gate_bias_mut(FORGET).value.fill(1.0);
        let mut state = ConvLstmState::zeros(1, 3, 3);
        state.c.set(&[0, 1, 2], 1.0);
        let s = cell.cell_forward(&Tensor::zeros(&[1, 3, 3]), &state).unwrap();
        let f = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((s.c.get(&[0, 1, 2]) - f).abs() < 1e-15);
        assert!((s.c.get(&[0, 1, 2]) - 0.731059).abs() < 1e-6);
        assert!((s.h.get(&[0, 1, 2]) - 0.5 * f.tanh()).abs() < 1e-15);
        assert!((s.h.get(&[0, 1, 2]) - 0.311856).abs() < 1e-6);
        assert_eq!(s.c.get(&[0, 0, 0]), 0.0);
    }

    #[test]
    fn default_memory_size() {
        assert_eq!(ConvLstmCell::<f32>::param_count(16, 64, 7), 1_003_776);
        let cell = ConvLstmCell::<f32>::new("m", 16, 64, 7).unwrap();
        assert_eq!(cell.num_params(), 1_003_776);
        assert_eq!(cell.params().len(), 12);
    }

    #[test]
    fn init_sets_forget_bias() {
        let mut cell = ConvLstmCell::<f32>::new("m", 2, 4, 3).unwrap();
        cell.init_uniform(0.08, &mut ChaCha8Rng::seed_from_u64(0));
        for (g, b) in cell.bias.iter().enumerate() {
            let want = if g == FORGET { 1.0 } else { 0.0 };
            assert!(b.value.data().iter().all(|&v| v == want));
        }
        for p in cell.w_x.iter().chain(&cell.w_h) {
            assert!(p.value.data().iter().all(|v| v.abs() <= 0.08));
        }
    }

    #[test]
    fn rejects_mismatched_state() {
        let mut cell = ConvLstmCell::<f32>::new("m", 2, 3, 3).unwrap();
        let x = Tensor::zeros(&[2, 4, 4]);
        assert!(cell.cell_forward(&x, &ConvLstmState::zeros(3, 4, 5)).is_err());
        assert!(cell.cell_forward(&Tensor::zeros(&[1, 4, 4]), &ConvLstmState::zeros(3, 4, 4)).is_err());
    }

    #[test]
    fn sequence_edge_cases() {
        let mut cell = random_cell(2, 3, 3, 0.3, 1);
        assert!(cell.sequence_forward(&[], None).is_err());
        let xs = random_inputs(2, 5, 1, 2);
        let (outs, fin) = cell.sequence_forward(&xs, None).unwrap();
        cell.clear_cache();
        let single = cell.cell_forward(&xs[0], &ConvLstmState::zeros(3, 5, 5)).unwrap();
        assert_eq!(outs[0], single.h);
        assert_eq!(fin, single);
        // Only one step cached now.
        assert!(cell.sequence_backward(&[]).is_err());
    }

    #[test]
    fn zero_weight_cell_outputs_zero() {
        let mut cell = ConvLstmCell::<f64>::new("m", 2, 3, 3).unwrap();
        let xs = random_inputs(2, 4, 6, 3);
        let (outs, _) = cell.sequence_forward(&xs, None).unwrap();
        assert!(outs.iter().all(|h| h.max_abs() == 0.0));
    }

    #[test]
    fn constant_input_settles_to_fixed_point() {
        let mut cell = random_cell(1, 1, 3, 0.5, 17);
        cell.gate_bias_mut(FORGET).value.fill(0.0);
        let x = random_inputs(1, 4, 1, 18).remove(0);
        let xs = vec![x; 50];
        let (outs, _) = cell.sequence_forward(&xs, None).unwrap();
        let last = outs.last().unwrap();
        let dist = |h: &Tensor<f64>| {
            h.data().iter().zip(last.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        let d: Vec<f64> = outs.iter().map(dist).collect();
        for w in d[5..].windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "distance to fixed point grew: {w:?}");
        }
        let step = outs[48].zip_map(&outs[49], |a, b| a - b).max_abs();
        assert!(step < 1e-6, "not settled, last step {step}");
        assert!(outs.iter().all(|h| h.all_finite() && h.max_abs() < 1.0));
    }

    #[test]
    fn zero_output_grads_give_zero_gradients() {
        let mut cell = random_cell(2, 3, 3, 0.3, 4);
        let xs = random_inputs(2, 5, 3, 5);
        cell.sequence_forward(&xs, None).unwrap();
        let zeros = vec![Tensor::zeros(&[3, 5, 5]); 3];
        let gx = cell.sequence_backward(&zeros).unwrap();
        assert!(gx.iter().all(|g| g.max_abs() == 0.0));
        assert!(cell.params().iter().all(|p| p.grad.max_abs() == 0.0));
    }

    #[test]
    fn credit_flows_back_to_first_input() {
        let mut cell = random_cell(2, 3, 3, 0.3, 6);
        let xs = random_inputs(2, 6, 3, 7);
        cell.sequence_forward(&xs, None).unwrap();
        let mut grads = vec![Tensor::zeros(&[3, 6, 6]); 3];
        grads[2] = Tensor::full(&[3, 6, 6], 1.0);
        let gx = cell.sequence_backward(&grads).unwrap();
        assert!(gx[0].max_abs() > 1e-6);
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let mut check = SequenceCheck::random(2, 3, 3, 6, 3, 21);
        let report = gradcheck(&mut check, &GradCheckConfig::default());
        assert!(report.max_rel_error <= 1e-5, "{report}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn gate_ranges_and_cell_bound(seed in 0u64..10_000) {
            let mut cell = random_cell(2, 3, 3, 1.5, seed);
            let xs = random_inputs(2, 5, 4, seed + 1);
            cell.sequence_forward(&xs, None).unwrap();
            let n = 3 * 25;
            for step in &cell.steps {
                let g = &step.gates;
                for k in 0..n {
                    for gate in [INPUT, FORGET, OUTPUT] {
                        prop_assert!(g[gate * n + k] > 0.0 && g[gate * n + k] < 1.0);
                    }
                    prop_assert!(g[CANDIDATE * n + k] > -1.0 && g[CANDIDATE * n + k] < 1.0);
                    let bound = step.c_prev.data()[k].abs() * g[FORGET * n + k] + g[INPUT * n + k];
                    prop_assert!(step.c.data()[k].abs() <= bound + 1e-12);
                }
            }
        }

        #[test]
        fn param_count_formula(din in 1usize..6, dm in 1usize..6, k in 0usize..3) {
            let k = 2 * k + 1;
            let cell = ConvLstmCell::<f32>::new("m", din, dm, k).unwrap();
            prop_assert_eq!(cell.num_params(), ConvLstmCell::<f32>::param_count(din, dm, k));
        }

        #[test]
        fn translation_equivariant_interior(seed in 0u64..10_000) {
            let (size, steps, k) = (10usize, 3usize, 3usize);
            let mut cell = random_cell(1, 2, k, 0.5, seed);
            let xs = random_inputs(1, size, steps, seed + 7);
            let shifted: Vec<_> = xs
                .iter()
                .map(|x| Tensor::from_fn(x.shape(), |i| if i[2] == 0 { 0.0 } else { x.get(&[i[0], i[1], i[2] - 1]) }))
                .collect();
            let (a, _) = cell.sequence_forward(&xs, None).unwrap();
            let (b, _) = cell.sequence_forward(&shifted, None).unwrap();
            // Each step widens the border-affected band by the kernel radius.
            let margin = steps * (k / 2);
            for t in 0..steps {
                for c in 0..2 {
                    for y in margin..size - margin {
                        for x in (margin + 1)..size - margin {
                            prop_assert!((b[t].get(&[c, y, x]) - a[t].get(&[c, y, x - 1])).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }
}
