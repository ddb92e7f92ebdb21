//! Raw logs to labelled windows: GDOP gating, resampling onto the nominal
//! grid, zero-phase low-pass, decimation to 20 Hz, label alignment, splits.

mod filter;
mod io;
mod norm;
mod window;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use filter::{decimate, lowpass, lowpass3, Biquad};
pub use io::{
    gps_path, imu_path, list_sessions, load_session, parse_gps_csv, parse_imu_csv, write_gps_csv, write_imu_csv,
    GPS_HEADER, IMU_HEADER,
};
pub use norm::{standardize, NormStats, StandardizeMode, Standardized};
pub use window::{extract_windows, split_sessions, snap_to_grid, Split, Stream, WindowEntry, WindowedDataset};

pub const IMU_RATE_HZ: f64 = 500.0;
pub const MODEL_RATE_HZ: f64 = 20.0;
/// Largest distance between a window's last sample and its label time.
pub const ALIGN_TOLERANCE_S: f64 = 0.025;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    /// Seconds since session start.
    pub t: f64,
    /// Specific force in the phone frame, m/s².
    pub a: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImuSession {
    pub session_id: String,
    pub samples: Vec<ImuSample>,
    pub nominal_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpsPoint {
    pub t: f64,
    /// m/s, never negative.
    pub speed: f64,
    pub gdop: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GpsTrack {
    pub session_id: String,
    pub points: Vec<GpsPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// GPS fixes are trusted from the first one with GDOP at or below this.
    pub gdop_max: f64,
    /// Low-pass cutoff in Hz, applied at the IMU rate.
    pub cutoff_hz: f64,
    /// Raw gaps longer than this (seconds) split a session.
    pub max_gap_s: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { gdop_max: 5.0, cutoff_hz: 8.0, max_gap_s: 0.1 }
    }
}

impl PipelineConfig {
    /// IMU samples per 20 Hz sample.
    pub fn decimation(&self) -> usize {
        (IMU_RATE_HZ / MODEL_RATE_HZ).round() as usize
    }
}

/// Gated, filtered and decimated session ready for windowing.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessedSession {
    pub session_id: String,
    /// Original-clock time of the gate instant; all other times are relative to it.
    pub gate_time: f64,
    /// Contiguous 20 Hz runs; a raw gap splits the session into several.
    pub streams: Vec<Stream>,
    pub track: GpsTrack,
}

/// Drops everything before the first GPS fix with `gdop <= threshold` and
/// shifts both clocks so that fix sits at t = 0. Returns the gate instant.
pub fn gate_gdop(track: &GpsTrack, imu: &ImuSession, threshold: f64) -> Result<(GpsTrack, ImuSession, f64)> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!("gdop threshold {threshold} must be positive")));
    }
    let first = track
        .points
        .iter()
        .position(|p| p.gdop <= threshold)
        .ok_or_else(|| Error::GdopNeverSettled { session: track.session_id.clone(), threshold })?;
    let t0 = track.points[first].t;
    let points = track.points[first..].iter().map(|p| GpsPoint { t: p.t - t0, ..*p }).collect();
    let samples = imu.samples.iter().filter(|s| s.t >= t0).map(|s| ImuSample { t: s.t - t0, a: s.a }).collect();
    Ok((
        GpsTrack { session_id: track.session_id.clone(), points },
        ImuSession { session_id: imu.session_id.clone(), samples, nominal_rate: imu.nominal_rate },
        t0,
    ))
}

/// Gate, resample onto the IMU grid, low-pass and decimate one session.
pub fn preprocess(imu: &ImuSession, track: &GpsTrack, cfg: &PipelineConfig) -> Result<ProcessedSession> {
    let (track, imu, gate_time) = gate_gdop(track, imu, cfg.gdop_max)?;
    let factor = cfg.decimation();
    let mut streams = Vec::new();
    for run in snap_to_grid(&imu.samples, imu.nominal_rate, cfg.max_gap_s) {
        // start each run on a multiple of the factor so 20 Hz ticks land on k/20 s
        let skip = (factor - run.start.rem_euclid(factor as i64) as usize) % factor;
        if run.samples.len() <= skip {
            continue;
        }
        let filtered = lowpass3(&run.samples[skip..], imu.nominal_rate, cfg.cutoff_hz)?;
        let start = (run.start + skip as i64) / factor as i64;
        streams.push(Stream { rate: imu.nominal_rate / factor as f64, start, samples: decimate(&filtered, factor)? });
    }
    Ok(ProcessedSession { session_id: imu.session_id.clone(), gate_time, streams, track })
}
