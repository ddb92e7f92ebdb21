//! RMSE/MAE, latency, and the train-then-evaluate harness behind window
//! sweeps, model comparisons and speed traces.

mod metrics;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::signal::{self, extract_windows, split_sessions, PipelineConfig, ProcessedSession, Split, WindowEntry};
use crate::train::{fit_with, EpochRecord, TrainConfig, TrainHistory};
use crate::zoo::{build_model, Model, ZooName};

pub use metrics::{
    mae, measure_latency, measure_latency_with, median, rmse, Clock, MetricsReport, WallClock, LATENCY_WARMUP,
    MIN_LATENCY_REPS,
};

pub const SWEEP_HEADER: &str = "model,window_samples,window_seconds,rmse_mps,mae_mps,latency_ms,param_count";
pub const COMPARE_HEADER: &str =
    "model,window_samples,window_seconds,rmse_mps,mae_mps,latency_ms,param_count,target_param_count";
pub const TRACE_HEADER: &str = "t,gt_speed,pred_speed";
pub const DEFAULT_SIZES: [usize; 6] = [5, 10, 20, 40, 60, 80];
pub const DEFAULT_COMPARE_WINDOW: usize = 20;

/// Sessions that made it through preprocessing, plus the ones rejected.
#[derive(Debug)]
pub struct Corpus {
    pub sessions: Vec<ProcessedSession>,
    pub rejected: Vec<(String, Error)>,
}

/// Preprocesses every session pair in `dirs`. Sessions whose GPS never
/// settles are set aside; any other failure aborts.
pub fn load_corpus<P: AsRef<Path>>(dirs: &[P], cfg: &PipelineConfig) -> Result<Corpus> {
    let mut sessions = Vec::new();
    let mut rejected = Vec::new();
    let mut seen = BTreeSet::new();
    for dir in dirs {
        for id in signal::list_sessions(dir)? {
            if !seen.insert(id.clone()) {
                return Err(Error::InvalidArgument(format!("session id {id:?} appears in more than one directory")));
            }
            let (imu, gps) = signal::load_session(dir, &id)?;
            match signal::preprocess(&imu, &gps, cfg) {
                Ok(s) => sessions.push(s),
                Err(e @ Error::GdopNeverSettled { .. }) => rejected.push((id, e)),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(Corpus { sessions, rejected })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Whole sessions held out for testing.
    pub test_sessions: usize,
    pub val_fraction: f64,
    pub split_seed: u64,
    pub model_seed: u64,
    pub latency_reps: usize,
    pub dataset: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { test_sessions: 1, val_fraction: 0.2, split_seed: 0, model_seed: 0, latency_reps: 50, dataset: "synthetic".into() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    /// Label time on the session's original clock, s.
    pub t: f64,
    pub gt_speed: f64,
    pub pred_speed: f64,
}

/// Predictions for already-extracted windows, one row per window.
pub fn trace_windows<F: Scalar>(model: &Model<F>, entries: &[WindowEntry], gate_time: f64) -> Result<Vec<TraceRow>> {
    let windows: Vec<&[f64]> = entries.iter().map(|e| e.window.as_slice()).collect();
    let pred = model.predict(&windows)?;
    Ok(entries
        .iter()
        .zip(pred)
        .map(|(e, p)| TraceRow { t: e.t_label + gate_time, gt_speed: e.label, pred_speed: p })
        .collect())
}

/// One row per labelled window of `session`.
pub fn emit_trace<F: Scalar>(model: &Model<F>, session: &ProcessedSession) -> Result<Vec<TraceRow>> {
    let (entries, _) = extract_windows(session, model.window_size)?;
    trace_windows(model, &entries, session.gate_time)
}

/// Metrics over trace rows; the only path from predictions to RMSE/MAE.
pub fn trace_metrics(rows: &[TraceRow]) -> Result<(f64, f64)> {
    let gt: Vec<f64> = rows.iter().map(|r| r.gt_speed).collect();
    let pred: Vec<f64> = rows.iter().map(|r| r.pred_speed).collect();
    Ok((rmse(&gt, &pred)?, mae(&gt, &pred)?))
}

pub struct Experiment<F> {
    pub report: MetricsReport,
    pub model: Model<F>,
    pub history: TrainHistory,
    pub split: Split,
    /// Test-session predictions, sessions in id order.
    pub trace: Vec<TraceRow>,
}

/// Build, train and evaluate one model at one window size on the held-out
/// sessions.
pub fn run_experiment<F: Scalar>(
    sessions: &[ProcessedSession],
    name: &str,
    window: usize,
    train_cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<Experiment<F>> {
    let zoo: ZooName = name.parse()?;
    let split = split_sessions(sessions, eval_cfg.test_sessions, eval_cfg.val_fraction, eval_cfg.split_seed, window)?;
    let mut model = build_model::<F>(name, window, eval_cfg.model_seed)?;
    let history = fit_with(&mut model, &split.train, &split.val, train_cfg, &mut *on_epoch)?;
    if split.test.is_empty() {
        return Err(Error::InvalidArgument(format!("held-out sessions {:?} yield no windows", split.test_sessions)));
    }
    let mut trace = Vec::with_capacity(split.test.len());
    for id in &split.test_sessions {
        let s = sessions.iter().find(|s| &s.session_id == id).expect("split picks existing sessions");
        let entries: Vec<WindowEntry> = split.test.entries.iter().filter(|e| &e.session_id == id).cloned().collect();
        trace.extend(trace_windows(&model, &entries, s.gate_time)?);
    }
    let (r, m) = trace_metrics(&trace)?;
    let latency = measure_latency(&model, &split.test.entries[0].window, eval_cfg.latency_reps)?;
    let report = MetricsReport::new(
        zoo.as_str(),
        window,
        r,
        m,
        latency,
        model.param_count(),
        zoo.target_param_count(),
        &eval_cfg.dataset,
    )?;
    Ok(Experiment { report, model, history, split, trace })
}

/// One CarSpeedNet experiment per window size.
pub fn sweep_windows<F: Scalar>(
    sessions: &[ProcessedSession],
    sizes: &[usize],
    train_cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
    on_epoch: &mut dyn FnMut(usize, &EpochRecord),
) -> Result<Vec<MetricsReport>> {
    sizes
        .iter()
        .map(|&w| {
            run_experiment::<F>(sessions, ZooName::CarSpeedNet.as_str(), w, train_cfg, eval_cfg, &mut |e| on_epoch(w, e))
                .map(|x| x.report)
                .map_err(|e| Error::Sweep { window: w, source: Box::new(e) })
        })
        .collect()
}

/// One experiment per zoo model at a shared window size.
pub fn compare_models<F: Scalar>(
    sessions: &[ProcessedSession],
    names: &[String],
    window: usize,
    train_cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
    on_epoch: &mut dyn FnMut(&str, &EpochRecord),
) -> Result<Vec<MetricsReport>> {
    for n in names {
        n.parse::<ZooName>()?;
    }
    names
        .iter()
        .map(|n| {
            run_experiment::<F>(sessions, n, window, train_cfg, eval_cfg, &mut |e| on_epoch(n, e))
                .map(|x| x.report)
                .map_err(|e| Error::Compare { model: n.clone(), source: Box::new(e) })
        })
        .collect()
}

fn write_reports(out: &mut impl Write, header: &str, reports: &[MetricsReport], target: bool) -> Result<()> {
    writeln!(out, "{header}")?;
    for r in reports {
        write!(
            out,
            "{},{},{},{},{},{},{}",
            r.model, r.window_samples, r.window_seconds, r.rmse_mps, r.mae_mps, r.latency_ms, r.param_count
        )?;
        if target {
            write!(out, ",{}", r.target_param_count)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_sweep_csv(out: &mut impl Write, reports: &[MetricsReport]) -> Result<()> {
    write_reports(out, SWEEP_HEADER, reports, false)
}

pub fn write_compare_csv(out: &mut impl Write, reports: &[MetricsReport]) -> Result<()> {
    write_reports(out, COMPARE_HEADER, reports, true)
}

pub fn write_trace_csv(out: &mut impl Write, rows: &[TraceRow]) -> Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.t, r.gt_speed, r.pred_speed)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
