use crate::conv_lstm::ConvLstmCell;
use crate::error::{Error, Result};
use crate::flow::{ThetaRegressor, DEFAULT_DELTA, DEFAULT_WEIGHT};
use crate::nn::ConvSpec;

use super::blocks::{Decoder, Encoder};
use super::loss::LossKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Architecture {
    /// Frames stacked as channels through a purely convolutional autoencoder.
    AeConv,
    /// Fully-connected LSTM encoder and decoder between the spatial encoder
    /// and decoder.
    AeFcLstm,
    /// Two stacked conv-LSTMs between the spatial encoder and decoder.
    AeConvLstm,
    /// Conv-LSTM memory, flow regressor and warping of the current features.
    AeConvLstmFlow,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::AeConv,
        Architecture::AeFcLstm,
        Architecture::AeConvLstm,
        Architecture::AeConvLstmFlow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::AeConv => "ae-conv",
            Architecture::AeFcLstm => "ae-fclstm",
            Architecture::AeConvLstm => "ae-convlstm",
            Architecture::AeConvLstmFlow => "ae-convlstm-flow",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    pub fn is_recurrent(self) -> bool {
        self != Architecture::AeConv
    }

    fn code(self) -> f64 {
        Self::ALL.iter().position(|&a| a == self).unwrap_or(0) as f64
    }

    fn from_code(code: f64) -> Option<Self> {
        Self::ALL.get(code as usize).copied().filter(|_| code >= 0.0 && code.fract() == 0.0)
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub arch: Architecture,
    /// Frame channels.
    pub channels: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    pub encoder_filters: usize,
    /// Kernel of the spatial encoder and decoder.
    pub encoder_kernel: usize,
    pub memory_channels: usize,
    pub memory_kernel: usize,
    pub theta_kernel: usize,
    /// Width of the middle layer of `AeConv`.
    pub conv_hidden: usize,
    /// Hidden size of the fully-connected LSTMs of `AeFcLstm`.
    pub fc_hidden: usize,
    /// Observed frames per prediction for `AeConv`; transitions per training
    /// sequence otherwise.
    pub t_in: usize,
    pub loss: LossKind,
    pub huber_delta: f64,
    pub huber_weight: f64,
    /// LSTM weights are drawn from `U(−r, r)`.
    pub lstm_init_range: f64,
}

impl ModelConfig {
    /// Defaults for 64×64 grayscale sequences.
    pub fn new(arch: Architecture) -> Self {
        ModelConfig {
            arch,
            channels: 1,
            frame_height: 64,
            frame_width: 64,
            encoder_filters: 16,
            encoder_kernel: 7,
            memory_channels: 64,
            memory_kernel: 7,
            theta_kernel: 15,
            conv_hidden: 64,
            fc_hidden: 512,
            t_in: 10,
            loss: LossKind::Bce,
            huber_delta: DEFAULT_DELTA,
            huber_weight: DEFAULT_WEIGHT,
            lstm_init_range: 0.08,
        }
    }

    /// 8×8 frames, 2 encoder filters, 4 memory channels, 3×3 kernels and a
    /// 5×5 flow regressor; two transitions.
    pub fn tiny(arch: Architecture) -> Self {
        ModelConfig {
            frame_height: 8,
            frame_width: 8,
            encoder_filters: 2,
            encoder_kernel: 3,
            memory_channels: 4,
            memory_kernel: 3,
            theta_kernel: 5,
            conv_hidden: 4,
            fc_hidden: 6,
            t_in: 2,
            ..Self::new(arch)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        for (name, v) in [
            ("channels", self.channels),
            ("encoder_filters", self.encoder_filters),
            ("memory_channels", self.memory_channels),
            ("conv_hidden", self.conv_hidden),
            ("fc_hidden", self.fc_hidden),
            ("t_in", self.t_in),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        for (name, k) in [
            ("encoder_kernel", self.encoder_kernel),
            ("memory_kernel", self.memory_kernel),
            ("theta_kernel", self.theta_kernel),
        ] {
            if k % 2 == 0 {
                return bad(format!("{name} must be odd, got {k}"));
            }
        }
        if self.frame_height == 0 || self.frame_width == 0 || self.frame_height % 2 != 0 || self.frame_width % 2 != 0 {
            return bad(format!(
                "frame extent must be positive and even, got {}×{}",
                self.frame_height, self.frame_width
            ));
        }
        if !(self.huber_delta > 0.0) || !(self.huber_weight >= 0.0) || !(self.lstm_init_range >= 0.0) {
            return bad("huber_delta must be positive; huber_weight and lstm_init_range non-negative".into());
        }
        Ok(())
    }

    /// Number of frames one training sequence must provide.
    pub fn frames_per_sequence(&self) -> usize {
        self.t_in + 1
    }

    /// Flattened size of the encoded features.
    pub fn feature_len(&self) -> usize {
        self.encoder_filters * (self.frame_height / 2) * (self.frame_width / 2)
    }

    /// Trainable parameters per component, computed from the layer sizes.
    pub fn breakdown(&self) -> Vec<(&'static str, usize)> {
        let (c, f, k) = (self.channels, self.encoder_filters, self.encoder_kernel);
        let decoder = ("decoder", Decoder::<f32>::param_count(f, c, k));
        match self.arch {
            Architecture::AeConv => vec![
                ("encoder", Encoder::<f32>::param_count(self.t_in * c, f, k)),
                ("conv2", ConvSpec::same(f, self.conv_hidden, k, true).num_params()),
                ("conv3", ConvSpec::same(self.conv_hidden, f, k, true).num_params()),
                decoder,
            ],
            Architecture::AeFcLstm => {
                let n = self.feature_len();
                let hdn = self.fc_hidden;
                vec![
                    ("encoder", Encoder::<f32>::param_count(c, f, k)),
                    ("fc_encoder", ConvLstmCell::<f32>::param_count(n, hdn, 1)),
                    ("fc_decoder", ConvLstmCell::<f32>::param_count(hdn, hdn, 1)),
                    ("projection", hdn * n + n),
                    decoder,
                ]
            }
            Architecture::AeConvLstm => vec![
                ("encoder", Encoder::<f32>::param_count(c, f, k)),
                ("memory", ConvLstmCell::<f32>::param_count(f, self.memory_channels, self.memory_kernel)),
                (
                    "temporal_decoder",
                    ConvLstmCell::<f32>::param_count(self.memory_channels, f, self.memory_kernel),
                ),
                decoder,
            ],
            Architecture::AeConvLstmFlow => vec![
                ("encoder", Encoder::<f32>::param_count(c, f, k)),
                ("memory", ConvLstmCell::<f32>::param_count(f, self.memory_channels, self.memory_kernel)),
                ("theta", ThetaRegressor::<f32>::param_count(self.memory_channels, self.theta_kernel)),
                decoder,
            ],
        }
    }

    pub fn num_params(&self) -> usize {
        self.breakdown().iter().map(|(_, n)| n).sum()
    }

    /// Flat numeric encoding stored alongside checkpoints.
    pub fn to_meta(&self) -> Vec<f64> {
        vec![
            self.arch.code(),
            self.channels as f64,
            self.frame_height as f64,
            self.frame_width as f64,
            self.encoder_filters as f64,
            self.encoder_kernel as f64,
            self.memory_channels as f64,
            self.memory_kernel as f64,
            self.theta_kernel as f64,
            self.conv_hidden as f64,
            self.fc_hidden as f64,
            self.t_in as f64,
            match self.loss {
                LossKind::L2 => 0.0,
                LossKind::Bce => 1.0,
            },
            self.huber_delta,
            self.huber_weight,
            self.lstm_init_range,
        ]
    }

    pub fn from_meta(meta: &[f64]) -> Result<Self> {
        if meta.len() != 16 {
            return Err(Error::CheckpointMismatch(format!(
                "model metadata has {} entries, expected 16",
                meta.len()
            )));
        }
        let arch = Architecture::from_code(meta[0])
            .ok_or_else(|| Error::CheckpointMismatch(format!("unknown architecture code {}", meta[0])))?;
        let u = |i: usize| meta[i] as usize;
        let config = ModelConfig {
            arch,
            channels: u(1),
            frame_height: u(2),
            frame_width: u(3),
            encoder_filters: u(4),
            encoder_kernel: u(5),
            memory_channels: u(6),
            memory_kernel: u(7),
            theta_kernel: u(8),
            conv_hidden: u(9),
            fc_hidden: u(10),
            t_in: u(11),
            loss: if meta[12] == 0.0 { LossKind::L2 } else { LossKind::Bce },
            huber_delta: meta[13],
            huber_weight: meta[14],
            lstm_init_range: meta[15],
        };
        config.validate()?;
        Ok(config)
    }
}
