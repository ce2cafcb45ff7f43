//! Spatio-temporal video autoencoder: a convolutional encoder/decoder around a
//! convolutional LSTM memory whose output is decoded into a dense optical-flow
//! map, used to warp the current frame's features into a next-frame
//! prediction. Training is unsupervised next-frame reconstruction.

pub mod conv_lstm;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod models;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
