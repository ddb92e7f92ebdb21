//! Deterministic drive simulator emitting session CSV pairs.
//!
//! All randomness flows from explicit seeds. The vehicle-frame specific force
//! is `(ds/dt, s·ψ̇, g)` plus a road vibration whose amplitude and frequency
//! grow with speed; the forward axis carries no vibration, so integrating it
//! on an ideal mount recovers the speed profile.

mod profile;
mod render;

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{gps_path, imu_path, write_gps_csv, write_imu_csv};

pub use profile::{gen_profile, DriveProfile, Ramp, Segment, SegmentKind, MAX_ACCEL, MAX_SPEED, MIN_DURATION};
pub use render::{render_gps, render_imu, GdopProfile, MountModel, GRAVITY, MAX_TILT, VIBRATION_GAIN};

/// Writes `<id>.imu.csv` and `<id>.gps.csv` into `out_dir`.
pub fn emit_session(
    profile: &DriveProfile,
    mount: &MountModel,
    gps_noise_std: f64,
    out_dir: impl AsRef<Path>,
    id: &str,
    seed: u64,
) -> Result<(PathBuf, PathBuf)> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (imu_seed, gps_seed): (u64, u64) = (rng.random(), rng.random());
    let mut imu = render_imu(profile, mount, imu_seed);
    imu.session_id = id.to_string();
    let mut gps = render_gps(profile, gps_noise_std, &GdopProfile::default(), gps_seed);
    gps.session_id = id.to_string();
    let (ip, gp) = (imu_path(dir, id), gps_path(dir, id));
    write_imu_csv(&ip, &imu)?;
    write_gps_csv(&gp, &gps)?;
    Ok((ip, gp))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Total corpus length; at least three sessions are always written.
    pub hours: f64,
    pub session_seconds: f64,
    pub seed: u64,
    /// Accelerometer white noise, m/s².
    pub imu_noise_std: f64,
    /// GPS speed noise, m/s.
    pub gps_noise_std: f64,
    /// Per-axis accelerometer bias bound, m/s².
    pub bias_max: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { hours: 1.0, session_seconds: 300.0, seed: 0, imu_noise_std: 0.05, gps_noise_std: 0.2, bias_max: 0.1 }
    }
}

impl SynthConfig {
    pub fn session_count(&self) -> usize {
        ((self.hours * 3600.0 / self.session_seconds).ceil() as usize).max(3)
    }
}

/// One corpus session: its id, ground-truth profile, mount and render seed.
#[derive(Clone, Debug)]
pub struct SessionPlan {
    pub id: String,
    pub profile: DriveProfile,
    pub mount: MountModel,
    pub render_seed: u64,
}

/// The sessions `generate_corpus` writes for `cfg`, without touching the disk.
pub fn corpus_plan(cfg: &SynthConfig) -> Result<Vec<SessionPlan>> {
    if !(cfg.session_seconds >= MIN_DURATION) || !(cfg.hours >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "session length {} s must be >= {MIN_DURATION} s and hours {} >= 0",
            cfg.session_seconds, cfg.hours
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.session_count())
        .map(|i| {
            let (p_seed, m_seed, r_seed): (u64, u64, u64) = (rng.random(), rng.random(), rng.random());
            Ok(SessionPlan {
                id: format!("drive_{i:03}"),
                profile: gen_profile(cfg.session_seconds, p_seed)?,
                mount: MountModel::random(m_seed, cfg.bias_max, cfg.imu_noise_std),
                render_seed: r_seed,
            })
        })
        .collect()
}

/// Writes `drive_000`, `drive_001`, … and returns their ids.
pub fn generate_corpus(out_dir: impl AsRef<Path>, cfg: &SynthConfig) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for plan in corpus_plan(cfg)? {
        emit_session(&plan.profile, &plan.mount, cfg.gps_noise_std, out_dir.as_ref(), &plan.id, plan.render_seed)?;
        ids.push(plan.id);
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{parse_gps_csv, parse_imu_csv};

    #[test]
    fn emit_parse_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = gen_profile(90.0, 1).unwrap();
        let m = MountModel::random(2, 0.1, 0.05);
        let (ip, gp) = emit_session(&p, &m, 0.2, dir.path(), "x", 3).unwrap();
        let imu = parse_imu_csv(&ip).unwrap();
        assert_eq!(imu.session_id, "x");
        assert_eq!(imu.samples.len(), 90 * 500);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let imu_seed: u64 = rng.random();
        let rendered = render_imu(&p, &m, imu_seed);
        for (a, b) in imu.samples.iter().zip(&rendered.samples) {
            assert!((a.t - b.t).abs() <= 5e-7);
            assert!(a.a.iter().zip(&b.a).all(|(x, y)| (x - y).abs() <= 5e-7 + 1e-12));
        }
        let gps = parse_gps_csv(&gp).unwrap();
        assert_eq!(gps.points.len(), 91);
        assert!(gps.points.iter().all(|q| q.speed >= 0.0));
    }

    #[test]
    fn emit_is_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let p = gen_profile(60.0, 9).unwrap();
        let m = MountModel::random(9, 0.1, 0.05);
        emit_session(&p, &m, 0.2, a.path(), "s", 9).unwrap();
        emit_session(&p, &m, 0.2, b.path(), "s", 9).unwrap();
        for name in ["s.imu.csv", "s.gps.csv"] {
            assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
        }
    }

    #[test]
    fn corpus_has_at_least_three_sessions() {
        let cfg = SynthConfig { hours: 0.0, session_seconds: 60.0, ..SynthConfig::default() };
        assert_eq!(cfg.session_count(), 3);
        assert_eq!(SynthConfig { hours: 1.0, ..cfg.clone() }.session_count(), 60);
        let dir = tempfile::tempdir().unwrap();
        let ids = generate_corpus(dir.path(), &cfg).unwrap();
        assert_eq!(ids, vec!["drive_000", "drive_001", "drive_002"]);
        assert_eq!(crate::signal::list_sessions(dir.path()).unwrap(), ids);
    }
}
