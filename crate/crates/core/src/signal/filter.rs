//! Zero-phase second-order low-pass filtering and decimation.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};

/// Normalised biquad coefficients (a0 = 1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Bilinear-transform low-pass with Butterworth damping (Q = 1/√2).
    pub fn lowpass(fs: f64, cutoff: f64) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff < fs / 2.0) {
            return Err(Error::InvalidArgument(format!("cutoff {cutoff} Hz must lie in (0, {}) for fs {fs} Hz", fs / 2.0)));
        }
        let w0 = 2.0 * PI * cutoff / fs;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * FRAC_1_SQRT_2);
        let a0 = 1.0 + alpha;
        let b1 = (1.0 - cos) / a0;
        Ok(Self { b: [b1 / 2.0, b1, b1 / 2.0], a: [-2.0 * cos / a0, (1.0 - alpha) / a0] })
    }

    /// Direct form II transposed, with the state initialised to the steady
    /// state of a constant input equal to `x[0]`.
    fn run(&self, x: impl Iterator<Item = f64>, out: &mut Vec<f64>) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let mut x = x.peekable();
        let Some(&x0) = x.peek() else { return };
        let mut z2 = (b2 - a2) * x0;
        let mut z1 = (b1 - a1) * x0 + z2;
        for xi in x {
            let y = b0 * xi + z1;
            z1 = b1 * xi - a1 * y + z2;
            z2 = b2 * xi - a2 * y;
            out.push(y);
        }
    }

    /// Forward then backward pass: zero phase, squared magnitude response.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let mut fwd = Vec::with_capacity(x.len());
        self.run(x.iter().copied(), &mut fwd);
        let mut back = Vec::with_capacity(x.len());
        self.run(fwd.iter().rev().copied(), &mut back);
        back.reverse();
        back
    }
}

/// Zero-phase low-pass of one axis.
pub fn lowpass(x: &[f64], fs: f64, cutoff: f64) -> Result<Vec<f64>> {
    Ok(Biquad::lowpass(fs, cutoff)?.filtfilt(x))
}

/// Zero-phase low-pass applied to each axis independently.
pub fn lowpass3(x: &[[f64; 3]], fs: f64, cutoff: f64) -> Result<Vec<[f64; 3]>> {
    let f = Biquad::lowpass(fs, cutoff)?;
    let axes: Vec<Vec<f64>> = (0..3).map(|a| f.filtfilt(&x.iter().map(|s| s[a]).collect::<Vec<_>>())).collect();
    Ok((0..x.len()).map(|i| [axes[0][i], axes[1][i], axes[2][i]]).collect())
}

/// Keeps samples `0, factor, 2·factor, …`.
pub fn decimate<T: Clone>(x: &[T], factor: usize) -> Result<Vec<T>> {
    if factor < 1 {
        return Err(Error::InvalidArgument("decimation factor must be >= 1".into()));
    }
    Ok(x.iter().step_by(factor).cloned().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(f: f64, fs: f64, secs: f64, phase: f64) -> Vec<f64> {
        (0..(fs * secs) as usize).map(|i| (2.0 * PI * f * i as f64 / fs + phase).sin()).collect()
    }

    /// Least-squares amplitude of a sinusoid of known frequency.
    fn amplitude(x: &[f64], f: f64, fs: f64) -> f64 {
        let (mut ss, mut sc, mut cc, mut xs, mut xc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (i, &v) in x.iter().enumerate() {
            let (s, c) = (2.0 * PI * f * i as f64 / fs).sin_cos();
            ss += s * s;
            sc += s * c;
            cc += c * c;
            xs += v * s;
            xc += v * c;
        }
        let det = ss * cc - sc * sc;
        let a = (xs * cc - xc * sc) / det;
        let b = (xc * ss - xs * sc) / det;
        a.hypot(b)
    }

    #[test]
    fn unit_dc_gain() {
        let y = lowpass(&[3.25; 1000], 500.0, 8.0).unwrap();
        assert!(y.iter().all(|v| (v - 3.25).abs() < 1e-9));
    }

    #[test]
    fn passband_and_stopband() {
        let x = sine(2.0, 500.0, 10.0, 0.3);
        let y = lowpass(&x, 500.0, 8.0).unwrap();
        let a = amplitude(&y[500..4500], 2.0, 500.0);
        assert!((a - 1.0).abs() < 0.05, "{a}");
        let x = sine(50.0, 500.0, 10.0, 0.3);
        let y = lowpass(&x, 500.0, 8.0).unwrap();
        assert!(amplitude(&y[500..4500], 50.0, 500.0) < 0.1);
    }

    #[test]
    fn zero_phase() {
        let x = sine(3.0, 500.0, 10.0, 0.0);
        let y = lowpass(&x, 500.0, 8.0).unwrap();
        // the fitted sine component carries no phase lag
        let (mut xs, mut xc) = (0.0, 0.0);
        for (i, v) in y[500..4500].iter().enumerate() {
            let (s, c) = (2.0 * PI * 3.0 * (i + 500) as f64 / 500.0).sin_cos();
            xs += v * s;
            xc += v * c;
        }
        assert!((xc / xs).abs() < 1e-3);
    }

    #[test]
    fn cutoff_range() {
        assert!(lowpass(&[1.0], 500.0, 0.0).is_err());
        assert!(lowpass(&[1.0], 500.0, 250.0).is_err());
        assert!(lowpass(&[], 500.0, 8.0).unwrap().is_empty());
    }

    #[test]
    fn decimation_indices() {
        let x: Vec<usize> = (0..500).collect();
        assert_eq!(decimate(&x, 1).unwrap(), x);
        let y = decimate(&x, 25).unwrap();
        assert_eq!(y.len(), 20);
        assert!(y.iter().enumerate().all(|(k, &i)| i == 25 * k));
        assert!(decimate(&x, 0).is_err());
    }

    #[test]
    fn no_alias_after_decimation() {
        let x = sine(50.0, 500.0, 10.0, 0.7);
        let y = decimate(&lowpass(&x, 500.0, 8.0).unwrap(), 25).unwrap();
        let peak = y[20..180].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak < 0.1, "{peak}");
    }
}
