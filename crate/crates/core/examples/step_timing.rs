//! Times one training-sequence forward/backward pass per architecture at the
//! default 64×64 configuration.

use std::time::Instant;

use vidpred::data::{builtin_glyphs, render_sequence, MovingMnistSpec};
use vidpred::models::{Architecture, Model, ModelConfig};
use vidpred::Tensor;

fn main() -> vidpred::Result<()> {
    let spec = MovingMnistSpec::default();
    let frames: Vec<Tensor<f32>> = render_sequence(&spec, &builtin_glyphs(), 0)?
        .into_iter()
        .map(|f| Tensor::from_vec(&[1, 64, 64], f))
        .collect::<vidpred::Result<_>>()?;
    for arch in Architecture::ALL {
        let config = ModelConfig::new(arch);
        let mut model = Model::<f32>::build(config, 1)?;
        let seq = &frames[..model.config().frames_per_sequence()];
        model.loss_and_backward(seq)?;
        let reps = 3;
        let start = Instant::now();
        for _ in 0..reps {
            model.loss_and_backward(seq)?;
        }
        println!("{:<18} {:>8.3} s/sequence", arch.name(), start.elapsed().as_secs_f64() / reps as f64);
    }
    Ok(())
}
