//! Central finite-difference gradient checking in double precision.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Layer;
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Probe at most this many evenly strided entries per tensor.
    /// `None` checks every entry.
    pub max_entries: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            max_entries: None,
        }
    }
}

impl GradCheckConfig {
    pub fn sampled(max_entries: usize) -> Self {
        GradCheckConfig {
            max_entries: Some(max_entries.max(1)),
            ..Default::default()
        }
    }

    fn indices(&self, len: usize) -> impl Iterator<Item = usize> {
        let stride = match self.max_entries {
            Some(m) if m < len => len.div_ceil(m),
            _ => 1,
        };
        (0..len).step_by(stride)
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// A scalar function of several tensors with an analytic gradient.
pub trait Checkable {
    fn tensor_names(&self) -> Vec<String>;

    fn tensor_mut(&mut self, index: usize) -> &mut Tensor<f64>;

    fn loss(&mut self) -> Result<f64>;

    /// Analytic gradients, one per tensor, in `tensor_names` order.
    fn gradients(&mut self) -> Result<Vec<Tensor<f64>>>;
}

#[derive(Clone, Debug)]
pub struct TensorReport {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorReport>,
    pub max_rel_error: f64,
    pub failure: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.failure.is_none() && self.max_rel_error <= tolerance
    }

    fn failed(message: String) -> Self {
        GradCheckReport {
            tensors: Vec::new(),
            max_rel_error: f64::INFINITY,
            failure: Some(message),
        }
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(msg) = &self.failure {
            return write!(f, "gradcheck failed: {msg}");
        }
        write!(f, "max relative error {:.3e}", self.max_rel_error)?;
        for t in &self.tensors {
            write!(
                f,
                "\n  {:<28} {:.3e} (at {}: analytic {:.6e}, numeric {:.6e})",
                t.name, t.max_rel_error, t.worst_index, t.analytic, t.numeric
            )?;
        }
        Ok(())
    }
}

/// Compares the elements of every tensor against central differences.
pub fn gradcheck<C: Checkable + ?Sized>(target: &mut C, config: &GradCheckConfig) -> GradCheckReport {
    let names = target.tensor_names();
    let analytic = match target.gradients() {
        Ok(g) => g,
        Err(e) => return GradCheckReport::failed(e.to_string()),
    };
    let mut tensors = Vec::with_capacity(names.len());
    let mut overall = 0.0f64;
    for (ti, name) in names.iter().enumerate() {
        let grad = &analytic[ti];
        if !grad.all_finite() {
            return GradCheckReport::failed(format!("non-finite analytic gradient in {name}"));
        }
        let mut worst = TensorReport {
            name: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in config.indices(grad.len()) {
            let original = target.tensor_mut(ti).data()[i];
            target.tensor_mut(ti).data_mut()[i] = original + config.step;
            let plus = target.loss();
            target.tensor_mut(ti).data_mut()[i] = original - config.step;
            let minus = target.loss();
            target.tensor_mut(ti).data_mut()[i] = original;
            let (plus, minus) = match (plus, minus) {
                (Ok(p), Ok(m)) => (p, m),
                (Err(e), _) | (_, Err(e)) => return GradCheckReport::failed(e.to_string()),
            };
            let numeric = (plus - minus) / (2.0 * config.step);
            if !numeric.is_finite() {
                return GradCheckReport::failed(format!("non-finite loss while perturbing {name}[{i}]"));
            }
            let err = relative_error(grad.data()[i], numeric);
            if err > worst.max_rel_error {
                worst.max_rel_error = err;
                worst.worst_index = i;
                worst.analytic = grad.data()[i];
                worst.numeric = numeric;
            }
        }
        overall = overall.max(worst.max_rel_error);
        tensors.push(worst);
    }
    GradCheckReport {
        tensors,
        max_rel_error: overall,
        failure: None,
    }
}

/// Adapter checking a single layer under the loss `Σ r ⊙ layer(input)` for a
/// fixed random projection `r`.
pub struct LayerCheck<'a, L> {
    layer: &'a mut L,
    input: Tensor<f64>,
    projection: Option<Tensor<f64>>,
    seed: u64,
}

impl<'a, L: Layer<f64>> LayerCheck<'a, L> {
    pub fn new(layer: &'a mut L, input: Tensor<f64>, seed: u64) -> Self {
        LayerCheck {
            layer,
            input,
            projection: None,
            seed,
        }
    }

    fn projection_for(&mut self, out: &Tensor<f64>) -> Tensor<f64> {
        if self.projection.as_ref().map(|p| p.shape() != out.shape()).unwrap_or(true) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            // Dyadic non-zero weights keep linear probes exactly representable.
            self.projection = Some(Tensor::from_fn(out.shape(), |_| {
                let mag = rng.gen_range(1..=16) as f64 / 16.0;
                if rng.gen::<bool>() {
                    mag
                } else {
                    -mag
                }
            }));
        }
        self.projection.clone().expect("projection initialised")
    }
}

impl<L: Layer<f64>> Checkable for LayerCheck<'_, L> {
    fn tensor_names(&self) -> Vec<String> {
        std::iter::once("input".to_string())
            .chain(self.layer.params().iter().map(|p| p.name.clone()))
            .collect()
    }

    fn tensor_mut(&mut self, index: usize) -> &mut Tensor<f64> {
        if index == 0 {
            &mut self.input
        } else {
            self.layer
                .params_mut()
                .into_iter()
                .nth(index - 1)
                .map(|p| &mut p.value)
                .expect("parameter index in range")
        }
    }

    fn loss(&mut self) -> Result<f64> {
        let out = self.layer.forward(&self.input)?;
        self.layer.clear_cache();
        let r = self.projection_for(&out);
        Ok(out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
    }

    fn gradients(&mut self) -> Result<Vec<Tensor<f64>>> {
        self.layer.clear_cache();
        self.layer.zero_grad();
        let out = self.layer.forward(&self.input)?;
        let r = self.projection_for(&out);
        let grad_in = self.layer.backward(&r)?;
        Ok(std::iter::once(grad_in)
            .chain(self.layer.params().iter().map(|p| p.grad.clone()))
            .collect())
    }
}

/// Convenience wrapper around [`LayerCheck`].
pub fn gradcheck_layer<L: Layer<f64>>(
    layer: &mut L,
    input: &Tensor<f64>,
    config: &GradCheckConfig,
    seed: u64,
) -> GradCheckReport {
    let mut check = LayerCheck::new(layer, input.clone(), seed);
    gradcheck(&mut check, config)
}
