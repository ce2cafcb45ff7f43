use std::fs;

use vidpred::data::{
    builtin_glyphs, write_moving_mnist, Checkpoint, DatasetReader, Glyph, MovingMnistSpec, DATASET_HEADER_LEN,
};
use vidpred::models::{Architecture, Model, ModelConfig};
use vidpred::train::{checkpoint_epoch, evaluate, load_model, prepare_frames, TrainConfig, Trainer, METRICS_HEADER};

fn small_spec(seed: u64) -> (MovingMnistSpec, Vec<Glyph>) {
    let spec = MovingMnistSpec {
        canvas: 16,
        seq_len: 20,
        speed_min: 0.5,
        speed_max: 1.25,
        seed,
        ..MovingMnistSpec::default()
    };
    (spec, builtin_glyphs().iter().map(|g| g.downsample(4)).collect())
}

fn small_config(arch: Architecture) -> ModelConfig {
    let mut c = ModelConfig::tiny(arch);
    c.frame_height = 16;
    c.frame_width = 16;
    c
}

#[test]
fn generate_train_checkpoint_predict() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, glyphs) = small_spec(11);
    let train_path = dir.path().join("train.mmsq");
    let val_path = dir.path().join("val.mmsq");
    let h = write_moving_mnist(&train_path, &spec, &glyphs, 6).unwrap();
    write_moving_mnist(&val_path, &MovingMnistSpec { seed: 12, ..spec.clone() }, &glyphs, 2).unwrap();
    assert_eq!(fs::metadata(&train_path).unwrap().len(), DATASET_HEADER_LEN + 6 * 20 * 16 * 16);
    assert_eq!(h.file_bytes(), fs::metadata(&train_path).unwrap().len());

    let mut train = DatasetReader::open(&train_path).unwrap();
    let mut val = DatasetReader::open(&val_path).unwrap();
    let model = Model::<f32>::build(small_config(Architecture::AeConvLstmFlow), 3).unwrap();
    let config = TrainConfig { batch_size: 3, epochs: 2, ..TrainConfig::default() };
    let mut trainer = Trainer::new(model, config.clone()).unwrap();
    let out = dir.path().join("run");
    let history = trainer.run(&mut train, &mut val, Some(&out)).unwrap();
    assert_eq!(history.len(), 2);
    assert_eq!((history[0].updates, history[1].updates), (2, 4));
    assert!(history[1].validation.flow_gradient.is_some());

    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), METRICS_HEADER);
    assert_eq!(metrics.lines().count(), 3);

    let ckpt = Checkpoint::load(&out.join("checkpoint.ckpt")).unwrap();
    assert_eq!(checkpoint_epoch(&ckpt).unwrap(), 2);
    let mut restored = load_model::<f32>(&ckpt).unwrap();
    for (a, b) in restored.params().iter().zip(trainer.model().params()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.value, b.value);
    }

    let eval_restored = evaluate(&mut restored, &mut val, config.binarize).unwrap();
    assert_eq!(eval_restored.loss, history[1].validation.loss);

    let frames = prepare_frames::<f32>(&val.read_frames(0).unwrap(), restored.config().frames_per_sequence(), Some(0.5)).unwrap();
    let preds = restored.forward_sequence(&frames).unwrap();
    let last = preds.last().unwrap();
    assert_eq!(last.target_index, frames.len() - 1);
    assert_eq!(last.frame.shape(), &[1, 16, 16]);
    let flow = last.flow.as_ref().unwrap();
    assert_eq!((flow.height(), flow.width()), (8, 8));
    assert!(last.frame.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn every_architecture_trains_a_step() {
    let raw: Vec<_> = (0..2).map(|i| vidpred::data::scaled_sequence(16, 20, 4, i).unwrap()).collect();
    for arch in Architecture::ALL {
        let cfg = small_config(arch);
        let batch: Vec<_> = raw
            .iter()
            .map(|s| prepare_frames::<f32>(s, cfg.frames_per_sequence(), Some(0.5)).unwrap())
            .collect();
        let mut trainer = Trainer::new(Model::<f32>::build(cfg, 0).unwrap(), TrainConfig::default()).unwrap();
        let before: Vec<_> = trainer.model().params().iter().map(|p| p.value.clone()).collect();
        let totals = trainer.step(&batch).unwrap();
        assert!(totals.total_per_pixel().is_finite() && totals.total_per_pixel() > 0.0, "{}", arch.name());
        assert_eq!(totals.sequences, 2);
        let moved = trainer.model().params().iter().zip(&before).filter(|(p, b)| &p.value != *b).count();
        assert!(moved > 0, "{} did not update", arch.name());
        assert_eq!(trainer.state().step, 1);
    }
}

#[test]
fn mismatched_checkpoint_names_the_tensor() {
    let a = Model::<f32>::build(small_config(Architecture::AeConvLstm), 0).unwrap();
    let mut ckpt = Checkpoint::new();
    ckpt.insert_params(a.params());
    let mut b = Model::<f32>::build(small_config(Architecture::AeConvLstmFlow), 0).unwrap();
    let err = ckpt.restore_params(b.params_mut()).unwrap_err().to_string();
    assert!(err.contains("theta") || err.contains("missing"), "{err}");
}
