//! CarSpeedNet, the five exploration baselines, and the shared model type.

mod weights;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{
    self, init, Activation, BatchStats, Bound, LayerParams, Mode, Padding, BN_EPSILON,
};
use crate::scalar::Scalar;
use crate::signal::NormStats;
use crate::tensor::Tensor;

pub use weights::{load_weights, read_weights, save_weights, write_weights, MAGIC, VERSION};

/// Tri-axial accelerometer input.
pub const INPUT_AXES: usize = 3;
pub const MIN_WINDOW: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { units: usize, activation: Activation },
    Conv1d { filters: usize, kernel: usize, dilation: usize, padding: Padding, activation: Activation },
    Lstm { units: usize, return_sequences: bool },
    Bilstm { units: usize, return_sequences: bool },
    Batchnorm,
    Dropout { rate: f64 },
    Relu,
    TakeLastStep,
    /// Conv → BN → ReLU → Conv → BN, plus a skip (1×1 projection when the
    /// channel count changes), then ReLU.
    ResidualBlock { filters: usize, kernel: usize },
}

/// Per-sample activation shape between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feature {
    Seq(usize),
    Flat(usize),
}

impl Feature {
    pub fn width(self) -> usize {
        match self {
            Feature::Seq(c) | Feature::Flat(c) => c,
        }
    }
}

impl LayerSpec {
    fn label(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Lstm { .. } => "lstm",
            LayerSpec::Bilstm { .. } => "bilstm",
            LayerSpec::Batchnorm => "batchnorm",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Relu => "relu",
            LayerSpec::TakeLastStep => "take_last_step",
            LayerSpec::ResidualBlock { .. } => "residual_block",
        }
    }

    /// Output feature shape, or an error if this layer cannot follow `input`.
    pub fn output(&self, input: Feature) -> Result<Feature> {
        let seq = |f: Feature| match f {
            Feature::Seq(c) => Ok(c),
            Feature::Flat(c) => Err(Error::InvalidArgument(format!("{} needs a sequence input, got {c} flat features", self.label()))),
        };
        Ok(match *self {
            LayerSpec::Dense { units, .. } => match input {
                Feature::Seq(_) => Feature::Seq(units),
                Feature::Flat(_) => Feature::Flat(units),
            },
            LayerSpec::Conv1d { filters, kernel, dilation, padding, .. } => {
                seq(input)?;
                if kernel == 0 || dilation == 0 || (padding == Padding::Same && kernel % 2 == 0) {
                    return Err(Error::InvalidArgument(format!("conv1d kernel {kernel} dilation {dilation} {padding:?}")));
                }
                Feature::Seq(filters)
            }
            LayerSpec::Lstm { units, return_sequences } | LayerSpec::Bilstm { units, return_sequences } => {
                seq(input)?;
                let w = if matches!(self, LayerSpec::Bilstm { .. }) { 2 * units } else { units };
                if return_sequences {
                    Feature::Seq(w)
                } else {
                    Feature::Flat(w)
                }
            }
            LayerSpec::Batchnorm | LayerSpec::Relu => input,
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::InvalidArgument(format!("dropout rate {rate}")));
                }
                input
            }
            LayerSpec::TakeLastStep => Feature::Flat(seq(input)?),
            LayerSpec::ResidualBlock { filters, kernel } => {
                seq(input)?;
                if kernel % 2 == 0 {
                    return Err(Error::InvalidArgument(format!("residual kernel {kernel} must be odd")));
                }
                Feature::Seq(filters)
            }
        })
    }

    /// Trainable parameter count from the closed forms.
    pub fn param_count(&self, input: Feature) -> usize {
        let d = input.width();
        match *self {
            LayerSpec::Dense { units, .. } => init::count::dense(d, units),
            LayerSpec::Conv1d { filters, kernel, .. } => init::count::conv1d(kernel, d, filters),
            LayerSpec::Lstm { units, .. } => init::count::lstm(d, units),
            LayerSpec::Bilstm { units, .. } => init::count::bilstm(d, units),
            LayerSpec::Batchnorm => init::count::batchnorm(d),
            LayerSpec::Dropout { .. } | LayerSpec::Relu | LayerSpec::TakeLastStep => 0,
            LayerSpec::ResidualBlock { filters, kernel } => {
                let proj = if d != filters { init::count::conv1d(1, d, filters) } else { 0 };
                init::count::conv1d(kernel, d, filters)
                    + init::count::conv1d(kernel, filters, filters)
                    + 2 * init::count::batchnorm(filters)
                    + proj
            }
        }
    }

    pub fn init_params<F: Scalar, R: Rng + ?Sized>(&self, input: Feature, rng: &mut R) -> LayerParams<F> {
        let d = input.width();
        match *self {
            LayerSpec::Dense { units, .. } => init::dense(d, units, rng),
            LayerSpec::Conv1d { filters, kernel, .. } => init::conv1d(kernel, d, filters, rng),
            LayerSpec::Lstm { units, .. } => init::lstm(d, units, rng),
            LayerSpec::Bilstm { units, .. } => init::bilstm(d, units, rng),
            LayerSpec::Batchnorm => init::batchnorm(d),
            LayerSpec::Dropout { .. } | LayerSpec::Relu | LayerSpec::TakeLastStep => LayerParams::new(),
            LayerSpec::ResidualBlock { filters, kernel } => {
                let mut p = LayerParams::new();
                p.merge("conv1", init::conv1d(kernel, d, filters, rng));
                p.merge("bn1", init::batchnorm(filters));
                p.merge("conv2", init::conv1d(kernel, filters, filters, rng));
                p.merge("bn2", init::batchnorm(filters));
                if d != filters {
                    p.merge("proj", init::conv1d(1, d, filters, rng));
                }
                p
            }
        }
    }

    fn has_batchnorm(&self) -> bool {
        matches!(self, LayerSpec::Batchnorm | LayerSpec::ResidualBlock { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ZooName {
    CarSpeedNet,
    DnnStar,
    Lstm,
    WaveNet,
    BiLstm,
    ResNet,
}

impl ZooName {
    pub const ALL: [ZooName; 6] =
        [ZooName::CarSpeedNet, ZooName::DnnStar, ZooName::Lstm, ZooName::WaveNet, ZooName::BiLstm, ZooName::ResNet];

    pub fn as_str(self) -> &'static str {
        match self {
            ZooName::CarSpeedNet => "carspeednet",
            ZooName::DnnStar => "dnn_star",
            ZooName::Lstm => "lstm",
            ZooName::WaveNet => "wavenet",
            ZooName::BiLstm => "bilstm",
            ZooName::ResNet => "resnet",
        }
    }

    /// Trainable-parameter totals published for each architecture.
    pub fn target_param_count(self) -> usize {
        match self {
            ZooName::CarSpeedNet => 178_169,
            ZooName::DnnStar => 13_031,
            ZooName::Lstm => 17_181,
            ZooName::WaveNet => 239_937,
            ZooName::BiLstm => 26_251,
            ZooName::ResNet => 95_043,
        }
    }

    pub fn layers(self) -> Vec<LayerSpec> {
        use LayerSpec::*;
        let lstm = |units, return_sequences| Lstm { units, return_sequences };
        let bilstm = |units, return_sequences| Bilstm { units, return_sequences };
        let conv = |filters, kernel, dilation, padding, activation| Conv1d { filters, kernel, dilation, padding, activation };
        match self {
            ZooName::CarSpeedNet => vec![
                bilstm(100, true),
                Batchnorm,
                lstm(50, true),
                Batchnorm,
                lstm(20, true),
                Batchnorm,
                lstm(20, true),
                Batchnorm,
                lstm(20, true),
                conv(64, 3, 1, Padding::Same, Activation::Relu),
                conv(64, 3, 1, Padding::Same, Activation::Relu),
                conv(32, 3, 1, Padding::Same, Activation::Relu),
                TakeLastStep,
                Dense { units: 32, activation: Activation::Relu },
                Dense { units: 1, activation: Activation::Linear },
            ],
            ZooName::DnnStar => vec![
                lstm(16, true),
                bilstm(16, true),
                bilstm(16, false),
                Dense { units: 1, activation: Activation::Linear },
            ],
            ZooName::Lstm => vec![
                lstm(32, true),
                Batchnorm,
                Dropout { rate: 0.2 },
                lstm(24, true),
                Batchnorm,
                Dropout { rate: 0.2 },
                lstm(16, false),
                Dense { units: 1, activation: Activation::Linear },
            ],
            ZooName::WaveNet => {
                let mut v: Vec<LayerSpec> = [1, 2, 4, 8, 16, 32]
                    .into_iter()
                    .map(|d| conv(WAVENET_WIDTH, 2, d, Padding::Causal, Activation::Relu))
                    .collect();
                v.push(conv(1, 1, 1, Padding::Causal, Activation::Linear));
                v.push(TakeLastStep);
                v
            }
            ZooName::BiLstm => vec![
                bilstm(32, true),
                Dropout { rate: 0.2 },
                lstm(24, false),
                Dense { units: 1, activation: Activation::Linear },
            ],
            ZooName::ResNet => vec![
                ResidualBlock { filters: 32, kernel: 3 },
                ResidualBlock { filters: 32, kernel: 3 },
                bilstm(32, false),
                Dense { units: 1, activation: Activation::Linear },
            ],
        }
    }
}

/// Channel width of every dilated stage, chosen so the total lands nearest
/// the published 239,937 (10c² + 13c + 1 trainable parameters).
pub const WAVENET_WIDTH: usize = 154;

impl fmt::Display for ZooName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ZooName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ZooName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::UnknownModel(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<F> {
    pub name: String,
    pub window_size: usize,
    pub layers: Vec<LayerSpec>,
    pub params: Vec<LayerParams<F>>,
    pub norm: Option<NormStats>,
}

/// Result of one forward pass on a tape.
pub struct ForwardPass {
    /// `[B]` raw (unclamped) speeds.
    pub output: Var,
    /// Tape handles of each layer's tensors, in layer order.
    pub bound: Vec<Bound>,
    /// Batch-norm statistics observed in train mode: (layer, prefix, stats).
    pub stats: Vec<(usize, &'static str, BatchStats)>,
}

pub fn build_model<F: Scalar>(name: &str, window_size: usize, seed: u64) -> Result<Model<F>> {
    let zoo: ZooName = name.parse()?;
    Model::from_layers(zoo.as_str(), window_size, zoo.layers(), seed)
}

/// Validates the chain and returns the per-layer input features.
pub fn infer_features(layers: &[LayerSpec]) -> Result<Vec<Feature>> {
    let mut f = Feature::Seq(INPUT_AXES);
    let mut inputs = Vec::with_capacity(layers.len());
    for (i, l) in layers.iter().enumerate() {
        inputs.push(f);
        f = l.output(f).map_err(|e| Error::InvalidArgument(format!("layer {i} ({}): {e}", l.label())))?;
    }
    if f != Feature::Flat(1) {
        return Err(Error::InvalidArgument(format!("model must end in one scalar per window, got {f:?}")));
    }
    Ok(inputs)
}

impl<F: Scalar> Model<F> {
    pub fn from_layers(name: &str, window_size: usize, layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        if window_size < MIN_WINDOW {
            return Err(Error::InvalidArgument(format!("window size {window_size} below minimum {MIN_WINDOW}")));
        }
        let inputs = infer_features(&layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layers.iter().zip(&inputs).map(|(l, &f)| l.init_params(f, &mut rng)).collect();
        Ok(Self { name: name.to_string(), window_size, layers, params, norm: None })
    }

    /// Sum of trainable tensor sizes (running statistics excluded).
    pub fn param_count(&self) -> usize {
        self.params.iter().map(LayerParams::trainable_count).sum()
    }

    /// Same total from the per-layer closed forms.
    pub fn closed_form_param_count(&self) -> usize {
        let inputs = infer_features(&self.layers).expect("validated at build");
        self.layers.iter().zip(inputs).map(|(l, f)| l.param_count(f)).sum()
    }

    /// Standardises flat `window_size×3` windows into a `[B, w, 3]` tensor.
    pub fn input_tensor(&self, windows: &[&[f64]]) -> Result<Tensor<F>> {
        let norm = self.norm.as_ref().ok_or(Error::MissingNormStats)?;
        let row = self.window_size * INPUT_AXES;
        let mut data = Vec::with_capacity(windows.len() * row);
        for w in windows {
            if w.len() != row {
                return Err(Error::WindowSize { expected: self.window_size, found: w.len() / INPUT_AXES });
            }
            data.extend(norm.apply(w).into_iter().map(F::of));
        }
        Tensor::new([windows.len(), self.window_size, INPUT_AXES], data)
    }

    /// Runs every layer on `x: [B, window_size, 3]` (already standardised).
    pub fn forward<R: Rng + ?Sized>(&self, tape: &mut Tape<F>, x: Var, mode: Mode, rng: &mut R) -> Result<ForwardPass> {
        let shape = tape.shape(x)?.to_vec();
        if shape.len() != 3 || shape[1] != self.window_size || shape[2] != INPUT_AXES {
            return Err(Error::Shape { op: "model input", lhs: shape, rhs: vec![self.window_size, INPUT_AXES] });
        }
        let batch = shape[0];
        let mut h = x;
        let mut bound = Vec::with_capacity(self.layers.len());
        let mut stats = Vec::new();
        for (i, (spec, p)) in self.layers.iter().zip(&self.params).enumerate() {
            let b = p.bind(tape);
            h = match *spec {
                LayerSpec::Dense { activation, .. } => layers::dense_forward(tape, h, &b, activation)?,
                LayerSpec::Conv1d { dilation, padding, activation, .. } => {
                    layers::conv1d_forward(tape, h, &b, padding, dilation, activation)?
                }
                LayerSpec::Lstm { return_sequences, .. } => layers::lstm_forward(tape, h, &b, return_sequences)?,
                LayerSpec::Bilstm { return_sequences, .. } => layers::bilstm_forward(tape, h, &b, return_sequences)?,
                LayerSpec::Batchnorm => {
                    let (y, s) = layers::batchnorm_forward(tape, h, &b, mode, BN_EPSILON)?;
                    stats.extend(s.map(|s| (i, "", s)));
                    y
                }
                LayerSpec::Dropout { rate } => layers::dropout_forward(tape, h, rate, mode, rng)?,
                LayerSpec::Relu => tape.relu(h)?,
                LayerSpec::TakeLastStep => {
                    let t = tape.shape(h)?[1];
                    tape.index_axis(h, 1, t - 1)?
                }
                LayerSpec::ResidualBlock { .. } => {
                    let same = |tape: &mut Tape<F>, x, p: &Bound| {
                        layers::conv1d_forward(tape, x, p, Padding::Same, 1, Activation::Linear)
                    };
                    let y = same(tape, h, &b.sub("conv1"))?;
                    let (y, s1) = layers::batchnorm_forward(tape, y, &b.sub("bn1"), mode, BN_EPSILON)?;
                    let y = tape.relu(y)?;
                    let y = same(tape, y, &b.sub("conv2"))?;
                    let (y, s2) = layers::batchnorm_forward(tape, y, &b.sub("bn2"), mode, BN_EPSILON)?;
                    stats.extend(s1.map(|s| (i, "bn1", s)));
                    stats.extend(s2.map(|s| (i, "bn2", s)));
                    let skip = if p.get("proj.kernel").is_ok() { same(tape, h, &b.sub("proj"))? } else { h };
                    let y = tape.add(y, skip)?;
                    tape.relu(y)?
                }
            };
            bound.push(b);
        }
        let output = tape.reshape(h, &[batch])?;
        Ok(ForwardPass { output, bound, stats })
    }

    /// Folds train-mode batch statistics into the running averages.
    pub fn apply_batch_stats(&mut self, stats: &[(usize, &'static str, BatchStats)], momentum: f64) -> Result<()> {
        for (layer, prefix, s) in stats {
            self.params[*layer].update_running(prefix, s, momentum)?;
        }
        for (layer, _, _) in stats {
            self.params[*layer].stats_ready = true;
        }
        Ok(())
    }

    pub fn uses_batchnorm(&self) -> bool {
        self.layers.iter().any(LayerSpec::has_batchnorm)
    }

    /// Infer-mode speeds in m/s (clamped at zero) for flat `window_size×3`
    /// windows of raw specific force.
    pub fn predict(&self, windows: &[&[f64]]) -> Result<Vec<f64>> {
        Ok(self.predict_raw(windows)?.into_iter().map(|s| s.max(0.0)).collect())
    }

    /// Infer-mode network outputs without the output clamp.
    pub fn predict_raw(&self, windows: &[&[f64]]) -> Result<Vec<f64>> {
        const CHUNK: usize = 128;
        let mut out = Vec::with_capacity(windows.len());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for chunk in windows.chunks(CHUNK) {
            let x = self.input_tensor(chunk)?;
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let pass = self.forward(&mut tape, xv, Mode::Infer, &mut rng)?;
            out.extend(tape.value(pass.output)?.data().iter().map(|v| v.as_f64()));
        }
        Ok(out)
    }

    pub fn cast<G: Scalar>(&self) -> Model<G> {
        Model {
            name: self.name.clone(),
            window_size: self.window_size,
            layers: self.layers.clone(),
            params: self
                .params
                .iter()
                .map(|p| {
                    let mut q = LayerParams::new();
                    for (k, t) in p.iter() {
                        q.insert(k, t.cast());
                    }
                    q.stats_ready = p.stats_ready;
                    q
                })
                .collect(),
            norm: self.norm.clone(),
        }
    }
}
