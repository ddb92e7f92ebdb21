//! Car speed estimation from smartphone accelerometer windows.
//!
//! The crate covers the whole path from raw 500 Hz accelerometer and 1 Hz GPS
//! logs to trained recurrent/convolutional speed regressors:
//!
//! - [`autodiff`]: dense tensors with a reverse-mode tape and gradient checks.
//! - [`layers`]: dense, 1-D convolution, (bi)LSTM, batch norm, dropout.
//! - [`zoo`]: CarSpeedNet and five baseline architectures, weights files.
//! - [`signal`]: CSV ingestion, GDOP gating, filtering, decimation, windows.
//! - [`synth`]: deterministic drive simulator emitting the same CSV formats.
//! - [`train`]: Adam, exponential learning-rate decay, early stopping.
//! - [`eval`]: RMSE/MAE, latency, window-size sweeps, model comparison.
//! - [`cli`]: the `carspeed` command line entry point.

// `!(x > y)` is the NaN-rejecting form of `x <= y` throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod eval;
pub mod layers;
pub mod signal;
pub mod synth;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod zoo;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
