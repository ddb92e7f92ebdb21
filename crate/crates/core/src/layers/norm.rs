use rand::Rng;

use super::{BatchStats, Bound, Mode};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

/// Per-channel normalisation over every axis but the last.
///
/// Train mode normalises with the batch statistics and returns them so the
/// caller can fold them into the running averages
/// ([`super::LayerParams::update_running`]); infer mode uses the running
/// statistics and is therefore independent of the rest of the batch.
pub fn batchnorm_forward<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    p: &Bound,
    mode: Mode,
    epsilon: f64,
) -> Result<(Var, Option<BatchStats>)> {
    let (gamma, beta) = (p.var("gamma")?, p.var("beta")?);
    let shape = tape.shape(x)?.to_vec();
    let c = tape.shape(gamma)?[0];
    if shape.len() < 2 || shape[shape.len() - 1] != c {
        return Err(Error::Shape { op: "batchnorm", lhs: shape, rhs: vec![c] });
    }
    let eps = F::of(epsilon);
    match mode {
        Mode::Train => {
            let mean = tape.mean_rows(x)?;
            let centred = tape.sub(x, mean)?;
            let sq = tape.mul(centred, centred)?;
            let var = tape.mean_rows(sq)?;
            let shifted = tape.add_scalar(var, eps)?;
            let inv = tape.rsqrt(shifted)?;
            let xhat = tape.mul(centred, inv)?;
            let scaled = tape.mul(xhat, gamma)?;
            let y = tape.add(scaled, beta)?;
            let stats = BatchStats { mean: tape.value(mean)?.to_f64_vec(), var: tape.value(var)?.to_f64_vec() };
            Ok((y, Some(stats)))
        }
        Mode::Infer => {
            if !p.stats_ready {
                return Err(Error::UninitializedStats);
            }
            let (rm, rv) = (p.var("running_mean")?, p.var("running_var")?);
            let centred = tape.sub(x, rm)?;
            let shifted = tape.add_scalar(rv, eps)?;
            let inv = tape.rsqrt(shifted)?;
            let xhat = tape.mul(centred, inv)?;
            let scaled = tape.mul(xhat, gamma)?;
            Ok((tape.add(scaled, beta)?, None))
        }
    }
}

/// Inverted dropout: survivors are scaled by `1/(1-rate)` at train time so
/// infer mode is the identity.
pub fn dropout_forward<F: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<F>,
    x: Var,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok(x);
    }
    let shape = tape.shape(x)?.to_vec();
    let n = shape.iter().product();
    let keep = F::of(1.0 / (1.0 - rate));
    let mask = (0..n).map(|_| if rng.random::<f64>() < rate { F::zero() } else { keep }).collect();
    let mask = tape.constant(Tensor::new(shape, mask)?);
    tape.mul(x, mask)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::super::{init, LayerParams};
    use super::*;
    use crate::autodiff::grad_check;

    fn train(x: Tensor<f64>, p: &LayerParams<f64>) -> (Tensor<f64>, BatchStats) {
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let b = p.bind(&mut tape);
        let (y, s) = batchnorm_forward(&mut tape, xv, &b, Mode::Train, BN_EPSILON).unwrap();
        (tape.value(y).unwrap().clone(), s.unwrap())
    }

    fn infer(x: Tensor<f64>, p: &LayerParams<f64>) -> Result<Tensor<f64>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let b = p.bind(&mut tape);
        let (y, _) = batchnorm_forward(&mut tape, xv, &b, Mode::Infer, BN_EPSILON)?;
        Ok(tape.value(y)?.clone())
    }

    #[test]
    fn constant_input_normalises_to_zero() {
        let p = init::batchnorm::<f64>(2);
        let (y, _) = train(Tensor::full([3, 4, 2], 7.5), &p);
        assert!(y.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn train_output_statistics() {
        let c = 3;
        let p = init::batchnorm::<f64>(c);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dist = Normal::new(4.0, 2.5).unwrap();
        let x: Vec<f64> = (0..8 * 9 * c).map(|_| dist.sample(&mut rng)).collect();
        let (y, _) = train(Tensor::from_f64([8, 9, c], &x).unwrap(), &p);
        for ch in 0..c {
            let vals: Vec<f64> = y.data().iter().skip(ch).step_by(c).copied().collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn infer_before_update_is_an_error() {
        let p = init::batchnorm::<f64>(2);
        assert!(matches!(infer(Tensor::zeros([1, 2]), &p), Err(Error::UninitializedStats)));
    }

    #[test]
    fn running_stats_ema() {
        let mut p = init::batchnorm::<f64>(1);
        let stats = BatchStats { mean: vec![2.0], var: vec![4.0] };
        p.update_running("", &stats, 0.9).unwrap();
        p.stats_ready = true;
        assert_eq!(p.get("running_mean").unwrap().data(), &[2.0]);
        let stats = BatchStats { mean: vec![0.0], var: vec![1.0] };
        p.update_running("", &stats, 0.9).unwrap();
        assert!((p.get("running_mean").unwrap().data()[0] - 1.8).abs() < 1e-12);
        assert!((p.get("running_var").unwrap().data()[0] - 3.7).abs() < 1e-12);
    }

    #[test]
    fn infer_is_batch_independent() {
        let mut p = init::batchnorm::<f64>(2);
        p.update_running("", &BatchStats { mean: vec![1.0, -1.0], var: vec![2.0, 0.5] }, BN_MOMENTUM).unwrap();
        p.stats_ready = true;
        let rows: Vec<f64> = (0..12).map(|i| i as f64 * 0.3).collect();
        let all = infer(Tensor::from_f64([3, 2, 2], &rows).unwrap(), &p).unwrap();
        for b in 0..3 {
            let one = infer(Tensor::from_f64([1, 2, 2], &rows[b * 4..(b + 1) * 4]).unwrap(), &p).unwrap();
            assert_eq!(one.data(), &all.data()[b * 4..(b + 1) * 4]);
        }
    }

    #[test]
    fn batchnorm_train_grad_check() {
        for seed in 0..3u64 {
            let c = 3;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gamma = Tensor::<f64>::from_f64([c], &[1.2, 0.7, -0.4]).unwrap();
            let beta = Tensor::from_f64([c], &[0.1, -0.3, 0.5]).unwrap();
            let x: Vec<f64> = (0..2 * 4 * c).map(|_| rng.random::<f64>() * 3.0 - 1.0).collect();
            let x = Tensor::from_f64([2, 4, c], &x).unwrap();
            let err = grad_check(
                |tape, v| {
                    let b = Bound::from_pairs([("gamma".to_string(), v[0]), ("beta".to_string(), v[1])]);
                    let (y, _) = batchnorm_forward(tape, v[2], &b, Mode::Train, BN_EPSILON)?;
                    let n = 2 * 4 * c;
                    let w = tape.constant(Tensor::from_f64([2, 4, c], &(0..n).map(|i| ((i * 7 % 5) as f64) - 2.0).collect::<Vec<_>>())?);
                    let yw = tape.mul(y, w)?;
                    tape.sum(yw)
                },
                &[gamma, beta, x],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-4, "batchnorm grad check {err}");
        }
    }

    fn dropout(x: Tensor<f64>, rate: f64, mode: Mode, seed: u64) -> Tensor<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let y = dropout_forward(&mut tape, xv, rate, mode, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        tape.value(y).unwrap().clone()
    }

    #[test]
    fn dropout_identities() {
        let x = Tensor::from_f64([2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(dropout(x.clone(), 0.0, Mode::Train, 1), x);
        assert_eq!(dropout(x.clone(), 0.0, Mode::Infer, 1), x);
        assert_eq!(dropout(x.clone(), 0.7, Mode::Infer, 1), x);
    }

    #[test]
    fn dropout_statistics() {
        let n = 100_000;
        let y = dropout(Tensor::full([n], 1.0), 0.5, Mode::Train, 42);
        let survivors = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
        let mean = y.data().iter().sum::<f64>() / n as f64;
        assert!((survivors - 0.5).abs() < 0.01, "survivor fraction {survivors}");
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn dropout_rate_one_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros([2]));
        assert!(dropout_forward(&mut tape, x, 1.0, Mode::Train, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
