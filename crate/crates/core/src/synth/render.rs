use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::profile::DriveProfile;
use crate::signal::{GpsPoint, GpsTrack, ImuSample, ImuSession, IMU_RATE_HZ};

pub const GRAVITY: f64 = 9.80665;
/// Road-vibration amplitude per unit speed, (m/s²)/(m/s).
pub const VIBRATION_GAIN: f64 = 0.025;
/// Largest mount tilt away from level, radians (15°).
pub const MAX_TILT: f64 = 15.0 * PI / 180.0;

/// Phone frame relative to the vehicle frame (x forward, y left, z up).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MountModel {
    /// Maps vehicle-frame vectors to phone-frame vectors; orthonormal.
    pub rotation: [[f64; 3]; 3],
    pub bias: [f64; 3],
    pub noise_std: f64,
    pub gravity: f64,
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

/// Rodrigues rotation by `angle` about the unit `axis`.
fn axis_angle(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let [x, y, z] = axis;
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}

impl MountModel {
    /// Identity mount, no bias, no noise.
    pub fn ideal() -> Self {
        Self { rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], bias: [0.0; 3], noise_std: 0.0, gravity: GRAVITY }
    }

    /// Random yaw, tilt up to 15° about a random horizontal axis, per-axis
    /// bias uniform in `±bias_max`.
    pub fn random(seed: u64, bias_max: f64, noise_std: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let yaw = axis_angle([0.0, 0.0, 1.0], rng.random_range(0.0..2.0 * PI));
        let heading: f64 = rng.random_range(0.0..2.0 * PI);
        let tilt = axis_angle([heading.cos(), heading.sin(), 0.0], rng.random_range(0.0..=MAX_TILT));
        let bias = if bias_max > 0.0 { [(); 3].map(|_| rng.random_range(-bias_max..=bias_max)) } else { [0.0; 3] };
        Self { rotation: matmul3(&tilt, &yaw), bias, noise_std, gravity: GRAVITY }
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [0, 1, 2].map(|i| r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2] + self.bias[i])
    }
}

/// Vibration frequency at speed `s`, Hz.
fn vibration_hz(s: f64) -> f64 {
    0.5 + 0.15 * s
}

/// 500 Hz specific force: `(ds/dt, s·ψ̇, g)` plus speed-proportional road
/// vibration on the lateral and vertical axes, rotated into the phone frame,
/// plus bias and white noise. Sample `i` is at `i / 500` s.
pub fn render_imu(profile: &DriveProfile, mount: &MountModel, seed: u64) -> ImuSession {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, mount.noise_std.max(0.0)).expect("finite std");
    let dt = 1.0 / IMU_RATE_HZ;
    let n = (profile.duration * IMU_RATE_HZ).round() as usize;
    let mut phase_z: f64 = rng.random_range(0.0..2.0 * PI);
    let mut phase_y: f64 = rng.random_range(0.0..2.0 * PI);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt;
        let s = profile.speed(t);
        let amp = VIBRATION_GAIN * s;
        let f_v = [
            profile.accel(t),
            s * profile.yaw_rate(t) + 0.4 * amp * phase_y.sin(),
            mount.gravity + amp * phase_z.sin(),
        ];
        let mut a = mount.apply(f_v);
        if mount.noise_std > 0.0 {
            for v in &mut a {
                *v += noise.sample(&mut rng);
            }
        }
        samples.push(ImuSample { t, a });
        let f = vibration_hz(s);
        phase_z = (phase_z + 2.0 * PI * f * dt) % (2.0 * PI);
        phase_y = (phase_y + 2.0 * PI * 1.37 * f * dt) % (2.0 * PI);
    }
    ImuSession { session_id: String::new(), samples, nominal_rate: IMU_RATE_HZ }
}

/// Fix-quality warm-up: GDOP stays high, then settles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdopProfile {
    pub warmup_s: f64,
    /// Warm-up values are drawn from `[warm_min, warm_min + 2)`.
    pub warm_min: f64,
    /// Settled values are drawn from `[1, settled_max]`.
    pub settled_max: f64,
}

impl Default for GdopProfile {
    fn default() -> Self {
        Self { warmup_s: 10.0, warm_min: 8.0, settled_max: 2.0 }
    }
}

/// 1 Hz fixes at integer seconds: speed plus Gaussian noise, clamped at 0.
pub fn render_gps(profile: &DriveProfile, noise_std: f64, gdop: &GdopProfile, seed: u64) -> GpsTrack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std.max(0.0)).expect("finite std");
    let n = profile.duration.floor() as usize;
    let points = (0..=n)
        .map(|i| {
            let t = i as f64;
            let mut speed = profile.speed(t);
            if noise_std > 0.0 {
                speed += noise.sample(&mut rng);
            }
            let g = if t < gdop.warmup_s {
                gdop.warm_min + rng.random_range(0.0..2.0)
            } else {
                rng.random_range(1.0..=gdop.settled_max)
            };
            GpsPoint { t, speed: speed.max(0.0), gdop: g }
        })
        .collect();
    GpsTrack { session_id: String::new(), points }
}

#[cfg(test)]
mod tests {
    use super::super::profile::{gen_profile, Ramp, SegmentKind};
    use super::*;

    fn norm(v: [f64; 3]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn at_rest_reads_gravity() {
        let p = DriveProfile::from_parts(&[(SegmentKind::Stop, 60.0, 0.0, Ramp::Smooth, 0.0)]).unwrap();
        let imu = render_imu(&p, &MountModel::ideal(), 1);
        assert_eq!(imu.samples.len(), 30_000);
        for s in &imu.samples {
            assert!((s.a[0]).abs() < 1e-12 && s.a[1].abs() < 1e-12);
            assert!((s.a[2] - GRAVITY).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_ramp_reads_two() {
        let p = DriveProfile::from_parts(&[
            (SegmentKind::Stop, 10.0, 0.0, Ramp::Linear, 0.0),
            (SegmentKind::Accelerate, 10.0, 20.0, Ramp::Linear, 0.0),
            (SegmentKind::Cruise, 40.0, 20.0, Ramp::Linear, 0.0),
        ])
        .unwrap();
        let imu = render_imu(&p, &MountModel::ideal(), 1);
        for s in imu.samples.iter().filter(|s| s.t >= 10.0 && s.t < 20.0) {
            assert!((s.a[0] - 2.0).abs() < 1e-12, "t {}", s.t);
        }
    }

    #[test]
    fn rotations_are_orthonormal_isometries() {
        for seed in 0..20 {
            let m = MountModel::random(seed, 0.0, 0.0);
            let r = &m.rotation;
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                    assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-9);
                }
            }
            let p = gen_profile(60.0, seed).unwrap();
            let raw = render_imu(&p, &MountModel::ideal(), 3);
            let rot = render_imu(&p, &m, 3);
            for (a, b) in raw.samples.iter().zip(&rot.samples) {
                assert!((norm(a.a) - norm(b.a)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn tilt_bound() {
        for seed in 0..50 {
            let m = MountModel::random(seed, 0.1, 0.05);
            // phone-frame image of vehicle up vs phone z axis
            let up = m.rotation[2][2];
            assert!(up >= MAX_TILT.cos() - 1e-12);
            assert!(m.bias.iter().all(|b| b.abs() <= 0.1));
        }
    }

    #[test]
    fn trapezoid_integration_recovers_speed() {
        for seed in 0..5 {
            let p = gen_profile(300.0, seed).unwrap();
            let imu = render_imu(&p, &MountModel::ideal(), seed);
            let dt = 1.0 / IMU_RATE_HZ;
            for start in (0..290).step_by(7) {
                let i0 = start * 500;
                let i1 = i0 + 5000;
                let integral: f64 =
                    (i0..i1).map(|i| 0.5 * (imu.samples[i].a[0] + imu.samples[i + 1].a[0]) * dt).sum();
                let ds = p.speed(i1 as f64 * dt) - p.speed(i0 as f64 * dt);
                assert!((integral - ds).abs() < 0.05, "seed {seed} span {start}");
            }
        }
    }

    #[test]
    fn gps_labels() {
        let p = gen_profile(120.0, 2).unwrap();
        let exact = render_gps(&p, 0.0, &GdopProfile::default(), 0);
        assert_eq!(exact.points.len(), 121);
        for q in &exact.points {
            assert_eq!(q.speed, p.speed(q.t));
            if q.t < 10.0 {
                assert!(q.gdop > 5.0);
            } else {
                assert!(q.gdop <= 2.0);
            }
        }
        let noisy = render_gps(&p, 1.0, &GdopProfile::default(), 0);
        assert!(noisy.points.iter().all(|q| q.speed >= 0.0));
        assert!(noisy.points.iter().any(|q| q.speed != p.speed(q.t)));
    }
}
