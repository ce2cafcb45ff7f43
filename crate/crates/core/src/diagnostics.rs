//! Finite-difference gradient probes for every differentiable component,
//! grouped by module.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conv_lstm::SequenceCheck;
use crate::error::{Error, Result};
use crate::flow::{FlowField, HuberPenalty, ThetaRegressor, Warp, DEFAULT_DELTA, DEFAULT_WEIGHT};
use crate::models::{Architecture, LossKind, Model, ModelCheck, ModelConfig};
use crate::nn::gradcheck::{gradcheck, gradcheck_layer, Checkable, GradCheckConfig, GradCheckReport};
use crate::nn::{init, Activation, ActivationKind, Conv2d, ConvSpec, Layer, Linear, MaxPool2x2, UpsampleNearest2x};
use crate::tensor::Tensor;

/// Tolerance on the maximum relative error of a single component.
pub const LAYER_TOLERANCE: f64 = 1e-5;
/// Tolerance for the whole model.
pub const END_TO_END_TOLERANCE: f64 = 1e-4;

pub const MODULES: [&str; 8] = ["conv", "pool", "upsample", "activation", "linear", "conv_lstm", "flow", "end_to_end"];

pub struct ProbeResult {
    pub module: &'static str,
    pub name: String,
    pub tolerance: f64,
    pub report: GradCheckReport,
}

impl ProbeResult {
    pub fn passed(&self) -> bool {
        self.report.passed(self.tolerance)
    }
}

impl fmt::Display for ProbeResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<10} {:<36} max rel err {:.3e} (tol {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.module,
            self.name,
            self.report.max_rel_error,
            self.tolerance
        )?;
        if let Some(msg) = &self.report.failure {
            write!(f, ": {msg}")?;
        }
        Ok(())
    }
}

fn uniform(shape: &[usize], range: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    init::uniform(shape, -range, range, rng)
}

fn layer_probe<L: Layer<f64>>(
    module: &'static str,
    name: &str,
    layer: &mut L,
    input: Tensor<f64>,
    config: &GradCheckConfig,
) -> ProbeResult {
    ProbeResult {
        module,
        name: name.to_string(),
        tolerance: LAYER_TOLERANCE,
        report: gradcheck_layer(layer, &input, config, 7),
    }
}

fn randomize_params<L: Layer<f64>>(layer: &mut L, range: f64, rng: &mut ChaCha8Rng) {
    for p in layer.params_mut() {
        p.value = uniform(p.value.shape(), range, rng);
    }
}

fn conv_probes(rng: &mut ChaCha8Rng) -> Result<Vec<ProbeResult>> {
    let mut out = Vec::new();
    for (c, o, k, size) in [(2, 3, 3, 5), (2, 6, 3, 5), (1, 4, 7, 8), (3, 2, 5, 6)] {
        let mut conv = Conv2d::<f64>::new("conv", ConvSpec::same(c, o, k, true))?;
        randomize_params(&mut conv, 0.5, rng);
        let x = uniform(&[c, size, size], 1.0, rng);
        out.push(layer_probe("conv", &format!("{c}->{o} k{k} on {size}x{size}"), &mut conv, x, &GradCheckConfig::default()));
    }
    Ok(out)
}

fn pool_probes(rng: &mut ChaCha8Rng) -> Vec<ProbeResult> {
    let x = uniform(&[3, 6, 8], 1.0, rng);
    vec![layer_probe("pool", "max 2x2 on 3x6x8", &mut MaxPool2x2::new(), x, &GradCheckConfig::default())]
}

fn upsample_probes(rng: &mut ChaCha8Rng) -> Vec<ProbeResult> {
    let x = uniform(&[2, 3, 4], 1.0, rng);
    vec![layer_probe("upsample", "nearest 2x on 2x3x4", &mut UpsampleNearest2x::new(), x, &GradCheckConfig::default())]
}

fn activation_probes(rng: &mut ChaCha8Rng) -> Vec<ProbeResult> {
    [ActivationKind::Tanh, ActivationKind::Sigmoid]
        .into_iter()
        .map(|kind| {
            let x = uniform(&[2, 4, 4], 2.0, rng);
            layer_probe("activation", &format!("{kind:?}").to_lowercase(), &mut Activation::new(kind), x, &GradCheckConfig::default())
        })
        .collect()
}

fn linear_probes(rng: &mut ChaCha8Rng) -> Vec<ProbeResult> {
    let mut lin = Linear::<f64>::new("linear", 7, 5);
    randomize_params(&mut lin, 0.5, rng);
    let x = uniform(&[7], 1.0, rng);
    vec![layer_probe("linear", "7->5", &mut lin, x, &GradCheckConfig::default())]
}

fn conv_lstm_probes() -> Vec<ProbeResult> {
    let mut check = SequenceCheck::random(2, 3, 3, 6, 3, 21);
    vec![ProbeResult {
        module: "conv_lstm",
        name: "cell 2->3 k3, T=3 BPTT".into(),
        tolerance: LAYER_TOLERANCE,
        report: gradcheck(&mut check, &GradCheckConfig::default()),
    }]
}

/// Flow regressor, smoothness penalty, grid generator and sampler chained:
/// `L = Σ r ⊙ S(x, GG(Θ(h))) + w·Σ H_δ(∇Θ(h))`.
pub struct FlowStackCheck {
    theta: ThetaRegressor<f64>,
    huber: HuberPenalty<f64>,
    memory: Tensor<f64>,
    features: Tensor<f64>,
    residual: Tensor<f64>,
}

impl FlowStackCheck {
    pub fn random(memory_channels: usize, kernel: usize, feature_channels: usize, size: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = ThetaRegressor::<f64>::new("theta", memory_channels, kernel)?;
        for p in theta.params_mut() {
            p.value = uniform(p.value.shape(), 0.15, &mut rng);
        }
        // A fractional mean displacement keeps sampling coordinates away from
        // the integer grid, where bilinear interpolation has kinks.
        let bias = theta.params_mut().pop().expect("projection bias");
        bias.value = Tensor::from_vec(&[2], vec![0.37, -0.41])?;
        Ok(FlowStackCheck {
            theta,
            huber: HuberPenalty::new(DEFAULT_DELTA, DEFAULT_WEIGHT),
            memory: uniform(&[memory_channels, size, size], 1.0, &mut rng),
            features: uniform(&[feature_channels, size, size], 1.0, &mut rng),
            residual: uniform(&[feature_channels, size, size], 1.0, &mut rng),
        })
    }
}

impl Checkable for FlowStackCheck {
    fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["memory".to_string(), "features".to_string()];
        names.extend(self.theta.params().iter().map(|p| p.name.clone()));
        names
    }

    fn tensor_mut(&mut self, i: usize) -> &mut Tensor<f64> {
        match i {
            0 => &mut self.memory,
            1 => &mut self.features,
            _ => &mut self.theta.params_mut().into_iter().nth(i - 2).expect("parameter index").value,
        }
    }

    fn loss(&mut self) -> Result<f64> {
        let flow = FlowField::new(self.theta.forward(&self.memory)?)?;
        self.theta.clear_cache();
        let warped = Warp::new().forward(&self.features, &flow)?;
        let data: f64 = warped.data().iter().zip(self.residual.data()).map(|(a, b)| a * b).sum();
        Ok(data + self.huber.weight() * self.huber.penalty(&flow))
    }

    fn gradients(&mut self) -> Result<Vec<Tensor<f64>>> {
        self.theta.params_mut().into_iter().for_each(|p| p.zero_grad());
        let flow = self.theta.forward(&self.memory)?;
        let flow = self.huber.forward(&flow)?;
        let mut warp = Warp::new();
        warp.forward(&self.features, &FlowField::new(flow)?)?;
        let (g_features, g_flow) = warp.backward(&self.residual)?;
        let g_flow = self.huber.backward(&g_flow)?;
        let g_memory = self.theta.backward(&g_flow)?;
        let mut grads = vec![g_memory, g_features];
        grads.extend(self.theta.params().iter().map(|p| p.grad.clone()));
        Ok(grads)
    }
}

fn flow_probes(rng: &mut ChaCha8Rng) -> Result<Vec<ProbeResult>> {
    let mut theta = ThetaRegressor::<f64>::new("theta", 64, 15)?;
    randomize_params(&mut theta, 0.1, rng);
    let x = uniform(&[64, 8, 8], 1.0, rng);
    let theta_probe = layer_probe("flow", "theta 64->2 k15 (600 entries/tensor)", &mut theta, x, &GradCheckConfig::sampled(600));
    let mut stack = FlowStackCheck::random(4, 5, 3, 8, 99)?;
    Ok(vec![
        theta_probe,
        ProbeResult {
            module: "flow",
            name: "theta+huber+grid+sampler stack".into(),
            tolerance: LAYER_TOLERANCE,
            report: gradcheck(&mut stack, &GradCheckConfig::default()),
        },
    ])
}

pub fn end_to_end_probe(arch: Architecture) -> Result<ProbeResult> {
    let mut config = ModelConfig::tiny(arch);
    config.loss = LossKind::L2;
    let model = Model::<f64>::build(config, 12)?;
    let mut check = ModelCheck::rollout(model, 3, 0.5, 1e-2, 13)?;
    Ok(ProbeResult {
        module: "end_to_end",
        name: format!("tiny {} T=3", arch.name()),
        tolerance: END_TO_END_TOLERANCE,
        report: gradcheck(&mut check, &GradCheckConfig::default()),
    })
}

/// Runs the probes of one module, or of all modules for `None`.
pub fn gradcheck_suite(module: Option<&str>) -> Result<Vec<ProbeResult>> {
    if let Some(m) = module {
        if !MODULES.contains(&m) {
            return Err(Error::InvalidArgument(format!("unknown module {m:?}; expected one of {}", MODULES.join(", "))));
        }
    }
    let wanted = |m: &str| module.is_none_or(|w| w == m);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::new();
    if wanted("conv") {
        out.extend(conv_probes(&mut rng)?);
    }
    if wanted("pool") {
        out.extend(pool_probes(&mut rng));
    }
    if wanted("upsample") {
        out.extend(upsample_probes(&mut rng));
    }
    if wanted("activation") {
        out.extend(activation_probes(&mut rng));
    }
    if wanted("linear") {
        out.extend(linear_probes(&mut rng));
    }
    if wanted("conv_lstm") {
        out.extend(conv_lstm_probes());
    }
    if wanted("flow") {
        out.extend(flow_probes(&mut rng)?);
    }
    if wanted("end_to_end") {
        out.push(end_to_end_probe(Architecture::AeConvLstmFlow)?);
    }
    Ok(out)
}
