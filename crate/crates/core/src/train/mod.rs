//! RMSprop training with a decaying learning rate, elementwise gradient
//! clipping, per-epoch metrics and checkpoints.

mod optim;

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use optim::{clip_gradients, lr_schedule, OptimState, RmsProp};

use crate::data::{binarize, sequence_seed, Checkpoint, DatasetReader};
use crate::error::{Error, Result};
use crate::flow::mean_abs_flow_gradient;
use crate::models::{mean_abs_error, Model, ModelConfig, SequenceLoss};
use crate::tensor::{Scalar, Tensor};

pub const METRICS_HEADER: &str = "epoch,lr,train_loss,val_loss,data_term,smooth_term";
pub const VALIDATION_HEADER: &str = "epoch,val_loss,val_mae,val_flow_gradient";
pub const METRICS_FILE: &str = "metrics.csv";
pub const VALIDATION_FILE: &str = "validation.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";

const MSQ_PREFIX: &str = "__optim.msq.";
const META_EPOCH: &str = "__meta.epoch";
const META_LR: &str = "__meta.lr";
const META_STEP: &str = "__meta.step";
const META_MODEL: &str = "__meta.model";

/// Indexed access to training sequences stored as `[0, 1]` frames.
pub trait SequenceSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn sequence(&mut self, index: usize) -> Result<Vec<Tensor<f32>>>;
}

impl SequenceSource for DatasetReader {
    fn len(&self) -> usize {
        DatasetReader::len(self)
    }

    fn sequence(&mut self, index: usize) -> Result<Vec<Tensor<f32>>> {
        self.read_frames(index)
    }
}

impl SequenceSource for Vec<Vec<Tensor<f32>>> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn sequence(&mut self, index: usize) -> Result<Vec<Tensor<f32>>> {
        self.get(index)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("sequence {index} out of range ({})", self.as_slice().len())))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub optimizer: RmsProp,
    /// Gradients are clamped to `[−clip, clip]`.
    pub clip: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Frames are thresholded at this value before use; `None` keeps them
    /// grayscale.
    pub binarize: Option<f32>,
    /// Accepted for interface compatibility; training always runs on one
    /// thread with a fixed accumulation order.
    pub single_thread: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 1e-4,
            lr_decay: 0.9,
            decay_every: 5,
            optimizer: RmsProp::default(),
            clip: 1.0,
            batch_size: 16,
            epochs: 50,
            seed: 0,
            binarize: Some(0.5),
            single_thread: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.initial_lr > 0.0
            && self.lr_decay > 0.0
            && self.decay_every > 0
            && (0.0..1.0).contains(&self.optimizer.alpha)
            && self.optimizer.epsilon > 0.0
            && self.clip > 0.0
            && self.batch_size > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid training configuration {self:?}")))
        }
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        lr_schedule(epoch, self.initial_lr, self.lr_decay, self.decay_every)
    }
}

/// Cuts a raw sequence to the frames the model consumes, thresholds it and
/// converts it to the training precision.
pub fn prepare_frames<T: Scalar>(raw: &[Tensor<f32>], count: usize, threshold: Option<f32>) -> Result<Vec<Tensor<T>>> {
    if raw.len() < count {
        return Err(Error::InvalidArgument(format!(
            "sequence has {} frames, the model needs {count}",
            raw.len()
        )));
    }
    Ok(raw[..count]
        .iter()
        .map(|f| match threshold {
            Some(t) => binarize(f, t).cast(),
            None => f.cast(),
        })
        .collect())
}

/// Losses accumulated over several sequences, normalised per pixel.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTotals {
    pub data: f64,
    pub smoothness: f64,
    pub pixels: usize,
    pub sequences: usize,
}

impl LossTotals {
    pub fn add(&mut self, s: &SequenceLoss) {
        self.data += s.data;
        self.smoothness += s.smoothness;
        self.pixels += s.predictions * s.frame_len;
        self.sequences += 1;
    }

    pub fn merge(&mut self, other: &LossTotals) {
        self.data += other.data;
        self.smoothness += other.smoothness;
        self.pixels += other.pixels;
        self.sequences += other.sequences;
    }

    pub fn data_per_pixel(&self) -> f64 {
        self.data / self.pixels.max(1) as f64
    }

    pub fn smoothness_per_pixel(&self) -> f64 {
        self.smoothness / self.pixels.max(1) as f64
    }

    pub fn total_per_pixel(&self) -> f64 {
        self.data_per_pixel() + self.smoothness_per_pixel()
    }
}

/// Validation quality of the final prediction of each sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Evaluation {
    /// Per-pixel data loss of the final prediction.
    pub loss: f64,
    /// Per-pixel mean absolute error of the final prediction.
    pub mae: f64,
    /// Mean `|∇T|` over every predicted flow, flow model only.
    pub flow_gradient: Option<f64>,
    pub sequences: usize,
}

pub fn evaluate<T: Scalar, S: SequenceSource + ?Sized>(
    model: &mut Model<T>,
    source: &mut S,
    threshold: Option<f32>,
) -> Result<Evaluation> {
    let count = model.config().frames_per_sequence();
    let (mut loss, mut mae, mut grad, mut flows) = (0.0, 0.0, 0.0, 0usize);
    for i in 0..source.len() {
        let frames = prepare_frames::<T>(&source.sequence(i)?, count, threshold)?;
        let results = model.forward_sequence(&frames)?;
        let last = results
            .last()
            .ok_or_else(|| Error::InvalidArgument("sequence produced no predictions".into()))?;
        let target = &frames[last.target_index];
        loss += last.data_loss / target.len() as f64;
        mae += mean_abs_error(&last.frame, target)?;
        for flow in results.iter().filter_map(|r| r.flow.as_ref()) {
            grad += mean_abs_flow_gradient(flow);
            flows += 1;
        }
    }
    let n = source.len().max(1) as f64;
    let eval = Evaluation {
        loss: loss / n,
        mae: mae / n,
        flow_gradient: (flows > 0).then(|| grad / flows as f64),
        sequences: source.len(),
    };
    if !eval.loss.is_finite() {
        return Err(Error::NonFinite("validation loss".into()));
    }
    Ok(eval)
}

/// One row of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train: LossTotals,
    pub validation: Evaluation,
    pub updates: u64,
}

impl EpochMetrics {
    pub fn metrics_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch,
            self.lr,
            self.train.total_per_pixel(),
            self.validation.loss,
            self.train.data_per_pixel(),
            self.train.smoothness_per_pixel()
        )
    }

    pub fn validation_row(&self) -> String {
        let grad = self.validation.flow_gradient.map(|g| g.to_string()).unwrap_or_default();
        format!("{},{},{},{grad}", self.epoch, self.validation.loss, self.validation.mae)
    }
}

pub struct Trainer<T> {
    model: Model<T>,
    config: TrainConfig,
    state: OptimState<T>,
    epochs_done: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Model<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let state = OptimState::new(&model.params(), config.lr(1));
        Ok(Trainer { model, config, state, epochs_done: 0 })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`]; the
    /// next epoch is the one after the stored epoch.
    pub fn resume(checkpoint: &Checkpoint, config: TrainConfig) -> Result<Self> {
        let model = load_model::<T>(checkpoint)?;
        let mut trainer = Trainer::new(model, config)?;
        for (name, m) in trainer.state.msq.iter_mut() {
            let stored: Tensor<T> = checkpoint.tensor(&format!("{MSQ_PREFIX}{name}"))?;
            stored.expect_shape("optimizer state", m.shape())?;
            *m = stored;
        }
        trainer.epochs_done = checkpoint.scalar(META_EPOCH)? as usize;
        trainer.state.step = checkpoint.scalar(META_STEP)? as u64;
        trainer.state.lr = checkpoint.scalar(META_LR)?;
        Ok(trainer)
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Model<T> {
        &mut self.model
    }

    pub fn into_model(self) -> Model<T> {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &OptimState<T> {
        &self.state
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    /// Parameters, optimizer accumulators and training metadata.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.insert_params(self.model.params());
        for (name, m) in &self.state.msq {
            c.insert_tensor(format!("{MSQ_PREFIX}{name}"), m);
        }
        c.insert_scalar(META_EPOCH, self.epochs_done as f64);
        c.insert_scalar(META_LR, self.state.lr);
        c.insert_scalar(META_STEP, self.state.step as f64);
        c.insert_tensor(META_MODEL, &Tensor::from_vec(&[16], self.model.config().to_meta()).expect("16 entries"));
        c
    }

    /// One update from a batch of prepared sequences: summed per-sequence
    /// losses, gradients averaged over the batch, clipped, then applied.
    pub fn step(&mut self, batch: &[Vec<Tensor<T>>]) -> Result<LossTotals> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        self.model.zero_grad();
        let mut totals = LossTotals::default();
        for frames in batch {
            totals.add(&self.model.loss_and_backward(frames)?);
        }
        if !(totals.data + totals.smoothness).is_finite() {
            return Err(Error::NonFinite(format!("training loss at update {}", self.state.step + 1)));
        }
        let inv = T::from_f64_lossy(1.0 / batch.len() as f64);
        let mut params = self.model.params_mut();
        for p in params.iter_mut() {
            p.grad.scale(inv);
        }
        clip_gradients(&mut params, -self.config.clip, self.config.clip);
        self.config.optimizer.step(&mut params, &mut self.state)?;
        Ok(totals)
    }

    /// Order in which epoch `epoch` visits `n` sequences.
    pub fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(sequence_seed(self.config.seed, epoch as u64));
        order.shuffle(&mut rng);
        order
    }

    /// Trains the next epoch and evaluates on `val`.
    pub fn train_epoch<A, B>(&mut self, train: &mut A, val: &mut B) -> Result<EpochMetrics>
    where
        A: SequenceSource + ?Sized,
        B: SequenceSource + ?Sized,
    {
        let epoch = self.epochs_done + 1;
        self.state.lr = self.config.lr(epoch);
        let count = self.model.config().frames_per_sequence();
        let threshold = self.config.binarize;
        let mut totals = LossTotals::default();
        for chunk in self.epoch_order(epoch, train.len()).chunks(self.config.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| prepare_frames(&train.sequence(i)?, count, threshold))
                .collect::<Result<Vec<_>>>()?;
            totals.merge(&self.step(&batch)?);
        }
        let validation = evaluate(&mut self.model, val, threshold)?;
        self.epochs_done = epoch;
        Ok(EpochMetrics { epoch, lr: self.state.lr, train: totals, validation, updates: self.state.step })
    }

    /// Trains up to the configured epoch count. With an output directory the
    /// metrics logs are appended and the checkpoint rewritten after every
    /// epoch; a failing epoch leaves the previous checkpoint in place.
    pub fn run<A, B>(&mut self, train: &mut A, val: &mut B, out: Option<&Path>) -> Result<Vec<EpochMetrics>>
    where
        A: SequenceSource + ?Sized,
        B: SequenceSource + ?Sized,
    {
        if train.is_empty() || val.is_empty() {
            return Err(Error::InvalidArgument("training and validation sets must be non-empty".into()));
        }
        let mut logs = match out {
            Some(dir) => Some(RunLogs::open(dir, self.epochs_done == 0)?),
            None => None,
        };
        let mut history = Vec::new();
        while self.epochs_done < self.config.epochs {
            let m = self.train_epoch(train, val)?;
            info!(
                "epoch {} lr {:.3e} train {:.5} val {:.5} mae {:.5}",
                m.epoch,
                m.lr,
                m.train.total_per_pixel(),
                m.validation.loss,
                m.validation.mae
            );
            if let (Some(logs), Some(dir)) = (logs.as_mut(), out) {
                logs.append(&m)?;
                self.checkpoint().save(&dir.join(CHECKPOINT_FILE))?;
            }
            history.push(m);
        }
        Ok(history)
    }
}

struct RunLogs {
    metrics: BufWriter<File>,
    validation: BufWriter<File>,
}

impl RunLogs {
    fn open(dir: &Path, fresh: bool) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let open = |name: &str, header: &str| -> Result<BufWriter<File>> {
            let path: PathBuf = dir.join(name);
            let mut f = if fresh {
                BufWriter::new(File::create(&path)?)
            } else {
                BufWriter::new(OpenOptions::new().append(true).create(true).open(&path)?)
            };
            if fresh {
                writeln!(f, "{header}")?;
                f.flush()?;
            }
            Ok(f)
        };
        Ok(RunLogs {
            metrics: open(METRICS_FILE, METRICS_HEADER)?,
            validation: open(VALIDATION_FILE, VALIDATION_HEADER)?,
        })
    }

    fn append(&mut self, m: &EpochMetrics) -> Result<()> {
        writeln!(self.metrics, "{}", m.metrics_row())?;
        writeln!(self.validation, "{}", m.validation_row())?;
        self.metrics.flush()?;
        self.validation.flush()?;
        Ok(())
    }
}

/// Rebuilds the model stored in a checkpoint.
pub fn load_model<T: Scalar>(checkpoint: &Checkpoint) -> Result<Model<T>> {
    let meta: Tensor<f64> = checkpoint.tensor(META_MODEL)?;
    let config = ModelConfig::from_meta(meta.data())?;
    let mut model = Model::build(config, 0)?;
    checkpoint.restore_params(model.params_mut())?;
    Ok(model)
}

/// Epoch stored in a checkpoint.
pub fn checkpoint_epoch(checkpoint: &Checkpoint) -> Result<usize> {
    Ok(checkpoint.scalar(META_EPOCH)? as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::scaled_sequence;
    use crate::models::Architecture;

    fn tiny_sequences(n: usize, seed: u64) -> Vec<Vec<Tensor<f32>>> {
        (0..n as u64).map(|i| scaled_sequence(8, 4, seed, i).unwrap()).collect()
    }

    fn cfg() -> TrainConfig {
        TrainConfig { batch_size: 2, epochs: 2, seed: 3, initial_lr: 1e-3, ..TrainConfig::default() }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let mut train = tiny_sequences(4, 1);
        let mut val = tiny_sequences(2, 2);
        let model = Model::<f32>::build(ModelConfig::tiny(Architecture::AeConvLstmFlow), 5).unwrap();
        let mut full = Trainer::new(model.clone(), cfg()).unwrap();
        let all = full.run(&mut train, &mut val, None).unwrap();

        let mut first = Trainer::new(model, TrainConfig { epochs: 1, ..cfg() }).unwrap();
        first.run(&mut train, &mut val, None).unwrap();
        let ckpt = Checkpoint::decode(&first.checkpoint().encode()).unwrap();
        assert_eq!(checkpoint_epoch(&ckpt).unwrap(), 1);
        let mut resumed = Trainer::<f32>::resume(&ckpt, cfg()).unwrap();
        let rest = resumed.run(&mut train, &mut val, None).unwrap();
        assert_eq!(rest.len(), 1);
        assert_eq!(rest[0], all[1]);
        assert_eq!(resumed.checkpoint().encode(), full.checkpoint().encode());
    }

    #[test]
    fn lr_follows_the_schedule_across_resume() {
        let mut train = tiny_sequences(2, 1);
        let mut val = tiny_sequences(1, 2);
        let model = Model::<f32>::build(ModelConfig::tiny(Architecture::AeConv), 5).unwrap();
        let config = TrainConfig { epochs: 6, batch_size: 2, ..TrainConfig::default() };
        let mut t = Trainer::new(model, TrainConfig { epochs: 5, ..config.clone() }).unwrap();
        let h = t.run(&mut train, &mut val, None).unwrap();
        assert!(h.iter().all(|m| m.lr == 1e-4));
        let mut t = Trainer::<f32>::resume(&t.checkpoint(), config).unwrap();
        let h = t.run(&mut train, &mut val, None).unwrap();
        assert_eq!(h[0].epoch, 6);
        assert!((h[0].lr - 9e-5).abs() < 1e-18);
    }

    #[test]
    fn logs_and_checkpoint_written_each_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let mut train = tiny_sequences(3, 1);
        let mut val = tiny_sequences(1, 2);
        let model = Model::<f32>::build(ModelConfig::tiny(Architecture::AeConvLstmFlow), 5).unwrap();
        let mut t = Trainer::new(model, cfg()).unwrap();
        t.run(&mut train, &mut val, Some(dir.path())).unwrap();
        let csv = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,0.001,") && lines[2].starts_with("2,"));
        assert_eq!(lines[1].split(',').count(), 6);
        let ckpt = Checkpoint::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(checkpoint_epoch(&ckpt).unwrap(), 2);
        let restored = load_model::<f32>(&ckpt).unwrap();
        for (a, b) in restored.params().iter().zip(t.model().params()) {
            assert_eq!(a.value, b.value);
        }
        let val_csv = fs::read_to_string(dir.path().join(VALIDATION_FILE)).unwrap();
        assert_eq!(val_csv.lines().count(), 3);
        assert!(val_csv.lines().nth(1).unwrap().split(',').nth(3).unwrap().parse::<f64>().is_ok());
    }

    #[test]
    fn non_finite_loss_halts_and_keeps_last_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let mut train = tiny_sequences(2, 1);
        let mut val = tiny_sequences(1, 2);
        let model = Model::<f32>::build(ModelConfig::tiny(Architecture::AeConvLstmFlow), 5).unwrap();
        let mut t = Trainer::new(model, TrainConfig { epochs: 1, ..cfg() }).unwrap();
        t.run(&mut train, &mut val, Some(dir.path())).unwrap();
        let good = fs::read(dir.path().join(CHECKPOINT_FILE)).unwrap();

        let mut t = Trainer::<f32>::resume(&Checkpoint::decode(&good).unwrap(), cfg()).unwrap();
        t.model_mut().params_mut()[0].value.data_mut()[0] = f32::NAN;
        let err = t.run(&mut train, &mut val, Some(dir.path())).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)), "{err}");
        assert_eq!(fs::read(dir.path().join(CHECKPOINT_FILE)).unwrap(), good);
        assert_eq!(fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap().lines().count(), 2);
    }

    #[test]
    fn shuffle_is_seeded_per_epoch() {
        let model = Model::<f32>::build(ModelConfig::tiny(Architecture::AeConv), 5).unwrap();
        let t = Trainer::new(model, cfg()).unwrap();
        assert_eq!(t.epoch_order(1, 50), t.epoch_order(1, 50));
        assert_ne!(t.epoch_order(1, 50), t.epoch_order(2, 50));
        let mut sorted = t.epoch_order(3, 50);
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn short_sequences_rejected() {
        let raw = vec![Tensor::<f32>::zeros(&[1, 8, 8]); 2];
        assert!(prepare_frames::<f32>(&raw, 3, None).is_err());
        let f = prepare_frames::<f64>(&raw, 2, Some(0.5)).unwrap();
        assert_eq!(f.len(), 2);
    }
}
