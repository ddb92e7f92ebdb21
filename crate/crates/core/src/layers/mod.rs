//! Differentiable layer primitives on top of [`crate::autodiff::Tape`].
//!
//! Sequences are `[batch, time, channels]`, vectors `[batch, features]`.

mod feedforward;
pub mod init;
mod norm;
mod params;
mod recurrent;

use serde::{Deserialize, Serialize};

pub use feedforward::{conv1d_forward, dense_forward};
pub use norm::{batchnorm_forward, dropout_forward, BN_EPSILON, BN_MOMENTUM};
pub use params::{is_trainable, BatchStats, Bound, LayerParams};
pub use recurrent::{bilstm_forward, lstm_forward};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Output length equals input length, taps centred on the output step.
    Same,
    /// Taps at and before the output step only.
    Causal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}
