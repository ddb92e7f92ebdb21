use std::collections::BTreeMap;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Named tensors of one layer. Batch-norm running statistics live here too
/// but are excluded from training.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<F> {
    tensors: BTreeMap<String, Tensor<F>>,
    /// Set once batch-norm running statistics have seen a training batch.
    pub stats_ready: bool,
}

impl<F: Scalar> Default for LayerParams<F> {
    fn default() -> Self {
        Self { tensors: BTreeMap::new(), stats_ready: false }
    }
}

pub fn is_trainable(name: &str) -> bool {
    !(name.ends_with("running_mean") || name.ends_with("running_var"))
}

impl<F: Scalar> LayerParams<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<F>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<F>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<F>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Nests `other` under `prefix.`.
    pub fn merge(&mut self, prefix: &str, other: LayerParams<F>) {
        for (k, v) in other.tensors {
            self.tensors.insert(format!("{prefix}.{k}"), v);
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.iter().filter(|(n, _)| is_trainable(n)).map(|(_, t)| t.len()).sum()
    }

    /// Places every tensor on `tape`: trainable ones as differentiable leaves,
    /// running statistics as constants.
    pub fn bind(&self, tape: &mut Tape<F>) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if is_trainable(k) { tape.leaf(t.clone()) } else { tape.constant(t.clone()) };
                (k.clone(), v)
            })
            .collect();
        Bound { vars, stats_ready: self.stats_ready }
    }

    /// Exponential moving average update of batch-norm running statistics
    /// under `prefix` (empty for a bare batch-norm layer). The first update
    /// copies the batch statistics.
    pub fn update_running(&mut self, prefix: &str, stats: &BatchStats, momentum: f64) -> Result<()> {
        let key = |s: &str| if prefix.is_empty() { s.to_string() } else { format!("{prefix}.{s}") };
        let fresh = !self.stats_ready;
        for (name, batch) in [("running_mean", &stats.mean), ("running_var", &stats.var)] {
            let t = self.get_mut(&key(name))?;
            for (r, &b) in t.data_mut().iter_mut().zip(batch) {
                *r = if fresh { F::of(b) } else { F::of(momentum * r.as_f64() + (1.0 - momentum) * b) };
            }
        }
        Ok(())
    }
}

/// Per-channel batch statistics observed in a train-mode pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Tape handles of one layer's tensors.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
    pub stats_ready: bool,
}

impl Bound {
    /// Handles for tensors already placed on a tape, e.g. by a gradient check.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Bound { vars: pairs.into_iter().collect(), stats_ready: true }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name:?}")))
    }

    /// The handles under `prefix.`, with the prefix stripped.
    pub fn sub(&self, prefix: &str) -> Bound {
        let p = format!("{prefix}.");
        Bound {
            vars: self
                .vars
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), *v)))
                .collect(),
            stats_ready: self.stats_ready,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
