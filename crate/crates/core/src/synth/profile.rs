use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Passenger-car longitudinal envelope, m/s².
pub const MAX_ACCEL: f64 = 4.0;
pub const MAX_SPEED: f64 = 40.0;
pub const MIN_DURATION: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Stop,
    Accelerate,
    Cruise,
    Brake,
    Turn,
}

/// Speed law of a ramp between `v0` and `v1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ramp {
    /// Constant acceleration.
    Linear,
    /// Acceleration `2Δv/T · sin²(πu)`: zero jerk discontinuity at the ends.
    Smooth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub start: f64,
    pub duration: f64,
    pub v0: f64,
    pub v1: f64,
    pub ramp: Ramp,
    /// Peak yaw rate of a turn, rad/s (signed); zero otherwise.
    pub yaw_peak: f64,
}

impl Segment {
    fn end(&self) -> f64 {
        self.start + self.duration
    }

    fn u(&self, t: f64) -> f64 {
        ((t - self.start) / self.duration).clamp(0.0, 1.0)
    }

    fn speed(&self, t: f64) -> f64 {
        let u = self.u(t);
        let dv = self.v1 - self.v0;
        match self.ramp {
            Ramp::Linear => self.v0 + dv * u,
            Ramp::Smooth => self.v0 + dv * (u - (2.0 * PI * u).sin() / (2.0 * PI)),
        }
    }

    fn accel(&self, t: f64) -> f64 {
        let dv = self.v1 - self.v0;
        match self.ramp {
            Ramp::Linear => dv / self.duration,
            Ramp::Smooth => 2.0 * dv / self.duration * (PI * self.u(t)).sin().powi(2),
        }
    }

    fn yaw_rate(&self, t: f64) -> f64 {
        self.yaw_peak * (PI * self.u(t)).sin()
    }
}

/// Piecewise speed and yaw-rate law of one drive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveProfile {
    pub duration: f64,
    pub segments: Vec<Segment>,
}

impl DriveProfile {
    /// Chains segments given as `(kind, duration, v1, ramp, yaw_peak)`, each
    /// starting at the previous end speed, from rest at t = 0.
    pub fn from_parts(parts: &[(SegmentKind, f64, f64, Ramp, f64)]) -> Result<Self> {
        let mut segments = Vec::with_capacity(parts.len());
        let (mut t, mut v) = (0.0, 0.0);
        for &(kind, duration, v1, ramp, yaw_peak) in parts {
            if !(duration > 0.0) || !(0.0..=MAX_SPEED).contains(&v1) {
                return Err(Error::InvalidArgument(format!("segment {kind:?}: duration {duration}, speed {v1}")));
            }
            segments.push(Segment { kind, start: t, duration, v0: v, v1, ramp, yaw_peak });
            t += duration;
            v = v1;
        }
        if segments.is_empty() {
            return Err(Error::InvalidArgument("profile needs at least one segment".into()));
        }
        Ok(Self { duration: t, segments })
    }

    fn at(&self, t: f64) -> &Segment {
        let i = self.segments.partition_point(|s| s.end() <= t);
        &self.segments[i.min(self.segments.len() - 1)]
    }

    /// m/s.
    pub fn speed(&self, t: f64) -> f64 {
        self.at(t).speed(t).max(0.0)
    }

    /// ds/dt, m/s².
    pub fn accel(&self, t: f64) -> f64 {
        self.at(t).accel(t)
    }

    /// rad/s.
    pub fn yaw_rate(&self, t: f64) -> f64 {
        self.at(t).yaw_rate(t)
    }

    pub fn kind(&self, t: f64) -> SegmentKind {
        self.at(t).kind
    }
}

/// Time a smooth ramp needs to change speed by `dv` at peak acceleration `a`.
fn ramp_time(dv: f64, a: f64) -> f64 {
    2.0 * dv.abs() / a
}

/// Braking peak reserved for the closing stop.
const END_BRAKE: f64 = 3.0;
const MIN_STOP: f64 = 5.0;

/// Random stop/accelerate/cruise/turn/brake sequence, starting and ending at rest.
pub fn gen_profile(duration: f64, seed: u64) -> Result<DriveProfile> {
    if !(duration >= MIN_DURATION) {
        return Err(Error::InvalidArgument(format!("profile duration {duration} s below {MIN_DURATION} s")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: Vec<(SegmentKind, f64, f64, Ramp, f64)> = Vec::new();
    let mut v: f64 = 0.0;
    let mut t = rng.random_range(MIN_STOP..15.0);
    parts.push((SegmentKind::Stop, t, 0.0, Ramp::Smooth, 0.0));
    // time still needed to come to rest and hold the closing stop
    let reserve = |v: f64| ramp_time(v, END_BRAKE) + MIN_STOP;

    loop {
        let left = duration - t;
        let pick: f64 = rng.random();
        let (kind, dur, v1, yaw) = if v == 0.0 {
            let target = if rng.random_bool(0.7) { rng.random_range(5.0..15.0) } else { rng.random_range(20.0..33.0) };
            (SegmentKind::Accelerate, ramp_time(target, rng.random_range(1.0..3.5)), target, 0.0)
        } else if pick < 0.35 {
            (SegmentKind::Cruise, rng.random_range(5.0..40.0), v, 0.0)
        } else if pick < 0.55 {
            let peak = (3.0 / v).min(0.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (SegmentKind::Turn, rng.random_range(3.0..10.0), v, peak)
        } else if pick < 0.8 {
            let target: f64 = if v < 17.5 { rng.random_range(5.0..15.0) } else { rng.random_range(20.0..33.0) };
            let kind = if target > v { SegmentKind::Accelerate } else { SegmentKind::Brake };
            (kind, ramp_time(target - v, rng.random_range(1.0..3.5)).max(1.0), target, 0.0)
        } else {
            let stop = rng.random_range(MIN_STOP..30.0);
            let brake = ramp_time(v, rng.random_range(1.5..3.5));
            if brake + stop + reserve(0.0) > left {
                break;
            }
            parts.push((SegmentKind::Brake, brake, 0.0, Ramp::Smooth, 0.0));
            parts.push((SegmentKind::Stop, stop, 0.0, Ramp::Smooth, 0.0));
            t += brake + stop;
            v = 0.0;
            continue;
        };
        if dur + reserve(v1) > left {
            break;
        }
        parts.push((kind, dur, v1, Ramp::Smooth, yaw));
        t += dur;
        v = v1;
    }

    // close: cruise out the slack, brake, then the final stop
    let left = duration - t;
    if v > 0.0 {
        let brake = ramp_time(v, END_BRAKE);
        let slack = left - brake - MIN_STOP;
        let stop = MIN_STOP + slack.min(rng.random_range(0.0..10.0));
        if left - brake - stop > 1e-9 {
            parts.push((SegmentKind::Cruise, left - brake - stop, v, Ramp::Smooth, 0.0));
        }
        parts.push((SegmentKind::Brake, brake, 0.0, Ramp::Smooth, 0.0));
        parts.push((SegmentKind::Stop, stop, 0.0, Ramp::Smooth, 0.0));
    } else if let Some(last) = parts.last_mut() {
        last.1 += left;
    }
    let mut p = DriveProfile::from_parts(&parts)?;
    // absorb floating-point drift so the profile spans exactly `duration`
    let drift = duration - p.duration;
    let last = p.segments.last_mut().expect("non-empty");
    last.duration += drift;
    p.duration = duration;
    Ok(p)
}
