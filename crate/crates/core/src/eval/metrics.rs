use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::zoo::Model;

fn check(gt: &[f64], pred: &[f64], op: &'static str) -> Result<()> {
    if gt.len() != pred.len() || gt.is_empty() {
        return Err(Error::Shape { op, lhs: vec![gt.len()], rhs: vec![pred.len()] });
    }
    Ok(())
}

/// `sqrt((1/N) Σ (gt − pred)²)`.
pub fn rmse(gt: &[f64], pred: &[f64]) -> Result<f64> {
    check(gt, pred, "rmse")?;
    Ok((gt.iter().zip(pred).map(|(g, p)| (g - p).powi(2)).sum::<f64>() / gt.len() as f64).sqrt())
}

/// `(1/N) Σ |gt − pred|`.
pub fn mae(gt: &[f64], pred: &[f64]) -> Result<f64> {
    check(gt, pred, "mae")?;
    Ok(gt.iter().zip(pred).map(|(g, p)| (g - p).abs()).sum::<f64>() / gt.len() as f64)
}

/// One row of a sweep or comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub model: String,
    pub window_samples: usize,
    pub window_seconds: f64,
    pub rmse_mps: f64,
    pub mae_mps: f64,
    pub latency_ms: f64,
    pub param_count: usize,
    pub target_param_count: usize,
    pub dataset: String,
}

impl MetricsReport {
    /// Fails if the metrics break `rmse >= mae >= 0` (beyond rounding).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &str,
        window_samples: usize,
        rmse_mps: f64,
        mae_mps: f64,
        latency_ms: f64,
        param_count: usize,
        target_param_count: usize,
        dataset: &str,
    ) -> Result<Self> {
        if !(mae_mps >= 0.0 && rmse_mps * (1.0 + 1e-12) >= mae_mps) {
            return Err(Error::InvalidArgument(format!("rmse {rmse_mps} < mae {mae_mps}")));
        }
        Ok(Self {
            model: model.to_string(),
            window_samples,
            window_seconds: window_samples as f64 / crate::signal::MODEL_RATE_HZ,
            rmse_mps,
            mae_mps,
            latency_ms,
            param_count,
            target_param_count,
            dataset: dataset.to_string(),
        })
    }
}

/// Millisecond time source.
pub trait Clock {
    fn now_ms(&mut self) -> f64;
}

pub struct WallClock(Instant);

impl Default for WallClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl Clock for WallClock {
    fn now_ms(&mut self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}

pub const LATENCY_WARMUP: usize = 5;
pub const MIN_LATENCY_REPS: usize = 10;

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Median wall time of `reps` single-window predictions after five warm-ups.
pub fn measure_latency<F: Scalar>(model: &Model<F>, window: &[f64], reps: usize) -> Result<f64> {
    measure_latency_with(model, window, reps, &mut WallClock::default())
}

pub fn measure_latency_with<F: Scalar>(model: &Model<F>, window: &[f64], reps: usize, clock: &mut impl Clock) -> Result<f64> {
    if reps < MIN_LATENCY_REPS {
        return Err(Error::InvalidArgument(format!("latency needs at least {MIN_LATENCY_REPS} repetitions, got {reps}")));
    }
    for _ in 0..LATENCY_WARMUP {
        model.predict(&[window])?;
    }
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = clock.now_ms();
        model.predict(&[window])?;
        times.push(clock.now_ms() - t0);
    }
    Ok(median(&mut times))
}
