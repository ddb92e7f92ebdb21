use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-axis z-score statistics of training windows, in m/s².
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StandardizeMode {
    Fit,
    Apply,
}

impl NormStats {
    /// Fits over every tri-axial sample of the given flat `w×3` windows.
    pub fn fit<'a>(windows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let windows: Vec<&[f64]> = windows.into_iter().collect();
        for w in &windows {
            for s in w.chunks_exact(3) {
                for a in 0..3 {
                    sum[a] += s[a];
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::InvalidArgument("cannot fit normalization on no samples".into()));
        }
        let mean = sum.map(|s| s / n as f64);
        // second pass for numerical stability (gravity offsets one axis by ~9.8)
        for w in &windows {
            for s in w.chunks_exact(3) {
                for a in 0..3 {
                    sq[a] += (s[a] - mean[a]).powi(2);
                }
            }
        }
        let std = sq.map(|v| (v / n as f64).sqrt());
        if let Some(axis) = std.iter().position(|&s| !(s > 0.0)) {
            return Err(Error::ZeroStd { axis });
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, window: &[f64]) -> Vec<f64> {
        window.iter().enumerate().map(|(i, &x)| (x - self.mean[i % 3]) / self.std[i % 3]).collect()
    }

    pub fn invert(&self, window: &[f64]) -> Vec<f64> {
        window.iter().enumerate().map(|(i, &z)| z * self.std[i % 3] + self.mean[i % 3]).collect()
    }
}

/// Outcome of [`standardize`].
#[derive(Clone, Debug, PartialEq)]
pub enum Standardized {
    Stats(NormStats),
    Data(Vec<Vec<f64>>),
}

/// Fit statistics on training windows, or apply previously fitted ones.
pub fn standardize(mode: StandardizeMode, data: &[Vec<f64>], stats: Option<&NormStats>) -> Result<Standardized> {
    match mode {
        StandardizeMode::Fit => Ok(Standardized::Stats(NormStats::fit(data.iter().map(Vec::as_slice))?)),
        StandardizeMode::Apply => {
            let stats = stats.ok_or(Error::MissingNormStats)?;
            Ok(Standardized::Data(data.iter().map(|w| stats.apply(w)).collect()))
        }
    }
}
