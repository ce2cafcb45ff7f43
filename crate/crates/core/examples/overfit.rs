//! Trains one architecture on a single small sequence and prints the
//! training-loss trajectory. Usage: overfit <arch> [size] [updates]

use vidpred::data::scaled_sequence;
use vidpred::models::{Architecture, Model, ModelConfig};
use vidpred::train::{prepare_frames, TrainConfig, Trainer};

fn main() -> vidpred::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let arch = Architecture::parse(args.get(1).map(String::as_str).unwrap_or("ae-convlstm-flow"))
        .ok_or_else(|| vidpred::Error::InvalidArgument("unknown architecture".into()))?;
    let size: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(16);
    let updates: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let raw = scaled_sequence(size, 20, 7, 0)?;
    let mut config = ModelConfig::new(arch);
    config.frame_height = size;
    config.frame_width = size;
    let frames = prepare_frames::<f32>(&raw, config.frames_per_sequence(), Some(0.5))?;
    let model = Model::<f32>::build(config, 1)?;
    let mut trainer = Trainer::new(model, TrainConfig::default())?;
    let batch = vec![frames];
    let first = trainer.step(&batch)?.total_per_pixel();
    println!("update 1: {first:.5}");
    for u in 2..=updates {
        let l = trainer.step(&batch)?.total_per_pixel();
        if u % 100 == 0 || l < 0.1 * first {
            println!("update {u}: {l:.5} ({:.1}%)", 100.0 * l / first);
        }
        if l < 0.1 * first {
            break;
        }
    }
    Ok(())
}
