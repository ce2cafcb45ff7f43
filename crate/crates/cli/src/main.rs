use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;

use vidpred::data::{
    builtin_glyphs, load_idx_glyphs, read_flo, write_moving_mnist, Checkpoint, DatasetReader, MovingMnistSpec, Pgm,
};
use vidpred::diagnostics::{gradcheck_suite, MODULES};
use vidpred::flow::{warp_error_interior, FlowField, Warp};
use vidpred::models::{Architecture, LossKind, Model, ModelConfig};
use vidpred::train::{checkpoint_epoch, load_model, prepare_frames, RmsProp, TrainConfig, Trainer};
use vidpred::viz::{flow_to_image, frame_to_image};
use vidpred::Tensor;

#[derive(Parser)]
#[command(name = "vidpred", version, about = "Unsupervised next-frame prediction with a flow-warping autoencoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a moving-digit dataset file.
    GenMnist(GenArgs),
    /// Train a model and write metrics and checkpoints.
    Train(TrainArgs),
    /// Predict the next frame of one sequence and write PNGs.
    Predict(PredictArgs),
    /// Warp a PGM image by a flow field.
    Warp(WarpArgs),
    /// Run the finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Print the trainable-parameter count of an architecture.
    Params(ParamsArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    digits: usize,
    #[arg(long, default_value_t = 2.0)]
    speed_min: f64,
    #[arg(long, default_value_t = 5.0)]
    speed_max: f64,
    #[arg(long, default_value_t = 20)]
    seq_len: usize,
    #[arg(long, default_value_t = 64)]
    canvas: usize,
    /// IDX3 file of 28×28 glyphs; the built-in set is used otherwise.
    #[arg(long)]
    glyphs: Option<PathBuf>,
    /// Max-pool factor applied to every glyph, for canvases smaller than 28.
    #[arg(long, default_value_t = 1)]
    glyph_downsample: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse_arch)]
    arch: Architecture,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_loss, default_value = "bce")]
    loss: LossKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    lr_decay: f64,
    #[arg(long, default_value_t = 5)]
    decay_every: usize,
    #[arg(long, default_value_t = 0.99)]
    alpha: f64,
    #[arg(long, default_value_t = 1e-8)]
    epsilon: f64,
    /// Gradients are clamped to [-clip, clip].
    #[arg(long, default_value_t = 1.0)]
    clip: f64,
    /// Smoothness weight; defaults to the model configuration's.
    #[arg(long)]
    huber_weight: Option<f64>,
    /// Input transitions per sequence.
    #[arg(long)]
    t_in: Option<usize>,
    /// Feed grayscale frames instead of thresholding them at 0.5.
    #[arg(long)]
    no_binarize: bool,
    #[arg(long)]
    single_thread: bool,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_binarize: bool,
}

#[derive(Args)]
struct WarpArgs {
    /// Image to sample from.
    #[arg(long)]
    image: PathBuf,
    /// `zero`, `shift:dx,dy`, or a .flo file.
    #[arg(long)]
    flow: String,
    #[arg(long)]
    out: PathBuf,
    /// Reference image; the mean absolute error of the warp against it is printed.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Border band excluded from the error.
    #[arg(long, default_value_t = 0)]
    margin: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    module: Option<String>,
}

#[derive(Args)]
struct ParamsArgs {
    #[arg(long, value_parser = parse_arch)]
    arch: Architecture,
    #[arg(long)]
    t_in: Option<usize>,
}

fn parse_arch(s: &str) -> Result<Architecture, String> {
    Architecture::parse(s).ok_or_else(|| {
        let names: Vec<_> = Architecture::ALL.iter().map(|a| a.name()).collect();
        format!("unknown architecture {s:?}; expected one of {}", names.join(", "))
    })
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    LossKind::parse(s).ok_or_else(|| format!("unknown loss {s:?}; expected bce or l2"))
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<vidpred::Error> for Failure {
    fn from(e: vidpred::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenMnist(a) => gen_mnist(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Warp(a) => warp(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Params(a) => params(a),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn gen_mnist(a: GenArgs) -> Result<ExitCode, Failure> {
    let glyphs = match &a.glyphs {
        Some(path) => load_idx_glyphs(path).with_context(|| format!("loading glyphs from {}", path.display()))?,
        None => builtin_glyphs(),
    };
    if a.glyph_downsample == 0 {
        return Err(Failure::Usage("--glyph-downsample must be positive".into()));
    }
    let glyphs: Vec<_> = glyphs.iter().map(|g| g.downsample(a.glyph_downsample)).collect();
    let spec = MovingMnistSpec {
        canvas: a.canvas,
        digits: a.digits,
        seq_len: a.seq_len,
        speed_min: a.speed_min,
        speed_max: a.speed_max,
        seed: a.seed,
    };
    let header = write_moving_mnist(&a.out, &spec, &glyphs, a.n).map_err(|e| match e {
        vidpred::Error::InvalidArgument(msg) => Failure::Usage(msg),
        other => other.into(),
    })?;
    println!(
        "wrote {} sequences of {}x{}x{} to {} ({} bytes)",
        header.n_sequences,
        header.seq_len,
        header.height,
        header.width,
        a.out.display(),
        header.file_bytes()
    );
    Ok(ExitCode::SUCCESS)
}

fn train(a: TrainArgs) -> Result<ExitCode, Failure> {
    let config = TrainConfig {
        initial_lr: a.lr,
        lr_decay: a.lr_decay,
        decay_every: a.decay_every,
        optimizer: RmsProp { alpha: a.alpha, epsilon: a.epsilon },
        clip: a.clip,
        batch_size: a.batch,
        epochs: a.epochs,
        seed: a.seed,
        binarize: (!a.no_binarize).then_some(0.5),
        single_thread: a.single_thread,
    };
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let mut train_set = DatasetReader::open(&a.data).with_context(|| format!("opening {}", a.data.display()))?;
    let mut val_set = DatasetReader::open(&a.val).with_context(|| format!("opening {}", a.val.display()))?;
    let h = *train_set.header();
    let mut trainer = match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            info!("resuming from {} after epoch {}", path.display(), checkpoint_epoch(&ckpt)?);
            let t = Trainer::<f32>::resume(&ckpt, config)?;
            if t.model().config().arch != a.arch {
                return Err(Failure::Usage(format!(
                    "checkpoint holds {}, --arch is {}",
                    t.model().config().arch,
                    a.arch
                )));
            }
            t
        }
        None => {
            let mut mc = ModelConfig::new(a.arch);
            mc.channels = h.channels as usize;
            mc.frame_height = h.height as usize;
            mc.frame_width = h.width as usize;
            mc.loss = a.loss;
            if let Some(t) = a.t_in {
                mc.t_in = t;
            }
            if let Some(w) = a.huber_weight {
                mc.huber_weight = w;
            }
            mc.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            if (h.seq_len as usize) < mc.frames_per_sequence() {
                return Err(Failure::Usage(format!(
                    "sequences hold {} frames, {} needs {}",
                    h.seq_len,
                    a.arch,
                    mc.frames_per_sequence()
                )));
            }
            let model = Model::<f32>::build(mc, a.seed)?;
            info!("{} with {} parameters", a.arch, model.num_params());
            Trainer::new(model, config)?
        }
    };
    match trainer.run(&mut train_set, &mut val_set, Some(&a.out)) {
        Ok(history) => {
            if let Some(last) = history.last() {
                println!(
                    "epoch {} val_loss {} val_mae {}",
                    last.epoch, last.validation.loss, last.validation.mae
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => Err(Failure::Runtime(anyhow::Error::new(e).context(format!(
            "training halted after epoch {}; last good checkpoint kept in {}",
            trainer.epochs_done(),
            a.out.display()
        )))),
    }
}

fn predict(a: PredictArgs) -> Result<ExitCode, Failure> {
    let ckpt = Checkpoint::load(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let mut model = load_model::<f32>(&ckpt)?;
    let mut data = DatasetReader::open(&a.data)?;
    if a.index >= data.len() {
        return Err(Failure::Usage(format!("index {} out of range ({} sequences)", a.index, data.len())));
    }
    let count = model.config().frames_per_sequence();
    let frames = prepare_frames::<f32>(&data.read_frames(a.index)?, count, (!a.no_binarize).then_some(0.5))?;
    let results = model.forward_sequence(&frames)?;
    let last = results.last().context("no prediction produced")?;
    fs::create_dir_all(&a.out)?;
    let target = &frames[last.target_index];
    frame_to_image(target)?.save_png(&a.out.join("ground_truth.png"))?;
    frame_to_image(&last.frame)?.save_png(&a.out.join("predicted.png"))?;
    frame_to_image(&frames[last.target_index - 1])?.save_png(&a.out.join("current.png"))?;
    if let Some(flow) = &last.flow {
        let enlarge = target.shape()[1] / flow.height();
        flow_to_image(flow, None).enlarge(enlarge).save_png(&a.out.join("flow.png"))?;
        println!("mean flow magnitude {:.4} px", flow.mean_magnitude());
    }
    println!(
        "frame {} of sequence {}: per-pixel loss {:.6}",
        last.target_index,
        a.index,
        last.data_loss / target.len() as f64
    );
    Ok(ExitCode::SUCCESS)
}

fn parse_flow_arg(spec: &str, height: usize, width: usize) -> Result<FlowField<f32>, Failure> {
    if spec == "zero" {
        return Ok(FlowField::zeros(height, width));
    }
    if let Some(rest) = spec.strip_prefix("shift:") {
        let parts: Vec<_> = rest.split(',').map(str::trim).collect();
        let parsed: Option<Vec<f32>> = parts.iter().map(|p| p.parse().ok()).collect();
        return match parsed.as_deref() {
            Some([dx, dy]) => Ok(FlowField::constant(*dx, *dy, height, width)),
            _ => Err(Failure::Usage(format!("--flow shift expects shift:dx,dy, got {spec:?}"))),
        };
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(Failure::Usage(format!("--flow must be zero, shift:dx,dy or an existing .flo file, got {spec:?}")));
    }
    let flow = read_flo(path).with_context(|| format!("reading {}", path.display()))?;
    if (flow.height(), flow.width()) != (height, width) {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "flow is {}x{}, image is {height}x{width}",
            flow.width(),
            flow.height()
        )));
    }
    Ok(flow)
}

fn warp(a: WarpArgs) -> Result<ExitCode, Failure> {
    let pgm = Pgm::read(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let image = pgm.to_tensor();
    let flow = parse_flow_arg(&a.flow, pgm.height, pgm.width)?;
    let warped: Tensor<f32> = Warp::new().forward(&image, &flow)?;
    Pgm::from_tensor(&warped, pgm.maxval)?.write(&a.out)?;
    if let Some(target) = &a.target {
        let t = Pgm::read(target).with_context(|| format!("reading {}", target.display()))?;
        let e = warp_error_interior(&image, &t.to_tensor(), &flow, a.margin)?;
        println!("per-pixel warp error {e:.6}");
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(a: GradcheckArgs) -> Result<ExitCode, Failure> {
    if let Some(m) = &a.module {
        if !MODULES.contains(&m.as_str()) {
            return Err(Failure::Usage(format!("unknown module {m:?}; expected one of {}", MODULES.join(", "))));
        }
    }
    let results = gradcheck_suite(a.module.as_deref())?;
    let mut ok = true;
    for r in &results {
        println!("{r}");
        ok &= r.passed();
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    println!("{} probes, {failed} failed", results.len());
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn params(a: ParamsArgs) -> Result<ExitCode, Failure> {
    let mut config = ModelConfig::new(a.arch);
    if let Some(t) = a.t_in {
        config.t_in = t;
    }
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    println!("{}", config.num_params());
    for (name, count) in config.breakdown() {
        println!("  {name:<18} {count}");
    }
    Ok(ExitCode::SUCCESS)
}
