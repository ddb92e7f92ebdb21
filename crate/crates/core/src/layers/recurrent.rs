use super::Bound;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Standard LSTM over `[B, T, d]` from zero initial state:
///
/// ```text
/// i, f, o = σ(x·W + h·U + b)   g = tanh(x·W + h·U + b)
/// c_t = f ⊙ c_{t-1} + i ⊙ g    h_t = o ⊙ tanh(c_t)
/// ```
///
/// Returns `[B, T, h]` when `return_sequences`, else the final `[B, h]`.
pub fn lstm_forward<F: Scalar>(tape: &mut Tape<F>, x: Var, p: &Bound, return_sequences: bool) -> Result<Var> {
    let (w, u, b) = (p.var("kernel")?, p.var("recurrent_kernel")?, p.var("bias")?);
    let shape = tape.shape(x)?.to_vec();
    if shape.len() != 3 {
        return Err(Error::Axis { op: "lstm", axis: 2, rank: shape.len() });
    }
    let (batch, steps, d) = (shape[0], shape[1], shape[2]);
    let wshape = tape.shape(w)?.to_vec();
    if wshape[0] != d {
        return Err(Error::Shape { op: "lstm", lhs: shape, rhs: wshape });
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("lstm over an empty sequence".into()));
    }
    let h = tape.shape(u)?[0];

    let flat = tape.reshape(x, &[batch * steps, d])?;
    let xw = tape.matmul(flat, w)?;
    let xw = tape.add(xw, b)?;
    let xw = tape.reshape(xw, &[batch, steps, 4 * h])?;

    let mut hidden: Option<Var> = None;
    let mut cell: Option<Var> = None;
    let mut outputs = Vec::with_capacity(if return_sequences { steps } else { 0 });
    for t in 0..steps {
        let mut z = tape.index_axis(xw, 1, t)?;
        if let Some(hp) = hidden {
            let hu = tape.matmul(hp, u)?;
            z = tape.add(z, hu)?;
        }
        let zi = tape.narrow(z, 1, 0, h)?;
        let gi = tape.sigmoid(zi)?;
        let zg = tape.narrow(z, 1, 2 * h, h)?;
        let gg = tape.tanh(zg)?;
        let zo = tape.narrow(z, 1, 3 * h, h)?;
        let go = tape.sigmoid(zo)?;
        let mut c = tape.mul(gi, gg)?;
        if let Some(cp) = cell {
            let zf = tape.narrow(z, 1, h, h)?;
            let gf = tape.sigmoid(zf)?;
            let keep = tape.mul(gf, cp)?;
            c = tape.add(keep, c)?;
        }
        let tc = tape.tanh(c)?;
        let ht = tape.mul(go, tc)?;
        if return_sequences {
            outputs.push(ht);
        }
        hidden = Some(ht);
        cell = Some(c);
    }
    if return_sequences {
        tape.stack(&outputs, 1)
    } else {
        Ok(hidden.expect("at least one step"))
    }
}

/// Forward LSTM plus an LSTM over the time-reversed input, concatenated on
/// the feature axis (`fwd.*` then `bwd.*` parameters).
pub fn bilstm_forward<F: Scalar>(tape: &mut Tape<F>, x: Var, p: &Bound, return_sequences: bool) -> Result<Var> {
    let fwd = lstm_forward(tape, x, &p.sub("fwd"), return_sequences)?;
    let reversed = tape.flip(x, 1)?;
    let bwd = lstm_forward(tape, reversed, &p.sub("bwd"), return_sequences)?;
    if return_sequences {
        let bwd = tape.flip(bwd, 1)?;
        tape.concat(fwd, bwd, 2)
    } else {
        tape.concat(fwd, bwd, 1)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::super::{init, LayerParams};
    use super::*;
    use crate::autodiff::grad_check;
    use crate::tensor::Tensor;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn run(x: Tensor<f64>, p: &LayerParams<f64>, bi: bool, seq: bool) -> Tensor<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let b = p.bind(&mut tape);
        let y = if bi { bilstm_forward(&mut tape, xv, &b, seq) } else { lstm_forward(&mut tape, xv, &b, seq) }.unwrap();
        tape.value(y).unwrap().clone()
    }

    fn zero_lstm(d: usize, h: usize) -> LayerParams<f64> {
        let mut p = LayerParams::new();
        p.insert("kernel", Tensor::zeros([d, 4 * h]));
        p.insert("recurrent_kernel", Tensor::zeros([h, 4 * h]));
        p.insert("bias", Tensor::zeros([4 * h]));
        p
    }

    #[test]
    fn zero_parameters_give_zero_states() {
        let p = zero_lstm(3, 4);
        let x = Tensor::from_f64([2, 6, 3], &(0..36).map(|i| i as f64 - 10.0).collect::<Vec<_>>()).unwrap();
        let y = run(x, &p, false, true);
        assert_eq!(y.shape(), &[2, 6, 4]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_hand_cell() {
        let mut p = zero_lstm(1, 1);
        // bias 1 on every gate: i = f = o = σ(1), g = tanh(1)
        p.insert("bias", Tensor::from_f64([4], &[1.0, 1.0, 1.0, 1.0]).unwrap());
        let y = run(Tensor::from_f64([1, 1, 1], &[0.7]).unwrap(), &p, false, false);
        let s = sigmoid(1.0);
        let want = s * (s * 1f64.tanh()).tanh();
        assert!((y.data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn empty_or_misshaped_input_rejected() {
        let p = zero_lstm(3, 2);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros([1, 4, 2]));
        let b = p.bind(&mut tape);
        assert!(matches!(lstm_forward(&mut tape, x, &b, true), Err(Error::Shape { .. })));
        let x2 = tape.constant(Tensor::zeros([4, 3]));
        assert!(lstm_forward(&mut tape, x2, &b, true).is_err());
    }

    #[test]
    fn last_state_equals_last_sequence_entry() {
        let p = init::lstm::<f64, _>(3, 5, &mut ChaCha8Rng::seed_from_u64(2));
        let x = Tensor::from_f64([2, 7, 3], &(0..42).map(|i| (i as f64 * 0.21).sin()).collect::<Vec<_>>()).unwrap();
        let seq = run(x.clone(), &p, false, true);
        let last = run(x, &p, false, false);
        for b in 0..2 {
            assert_eq!(&seq.data()[(b * 7 + 6) * 5..(b * 7 + 7) * 5], &last.data()[b * 5..(b + 1) * 5]);
        }
    }

    #[test]
    fn bilstm_palindrome_symmetry() {
        let h = 4;
        let single = init::lstm::<f64, _>(2, h, &mut ChaCha8Rng::seed_from_u64(7));
        let mut p = LayerParams::new();
        p.merge("fwd", single.clone());
        p.merge("bwd", single);
        let frames = [[0.1, 2.0], [0.5, -1.0], [1.5, 0.3], [0.5, -1.0], [0.1, 2.0]];
        let x = Tensor::from_f64([1, 5, 2], &frames.concat()).unwrap();
        let y = run(x, &p, true, true);
        assert_eq!(y.shape(), &[1, 5, 2 * h]);
        let at = |t: usize, j: usize| y.data()[t * 2 * h + j];
        for t in 0..5 {
            for j in 0..h {
                assert!((at(t, j) - at(4 - t, h + j)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn bilstm_width_and_count() {
        let p = init::bilstm::<f64, _>(3, 100, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(p.trainable_count(), 83_200);
        let y = run(Tensor::zeros([1, 4, 3]), &p, true, true);
        assert_eq!(y.shape(), &[1, 4, 200]);
        let y = run(Tensor::zeros([2, 4, 3]), &p, true, false);
        assert_eq!(y.shape(), &[2, 200]);
    }

    fn check(bi: bool, seq: bool, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = if bi { init::bilstm::<f64, _>(2, 3, &mut rng) } else { init::lstm::<f64, _>(2, 3, &mut rng) };
        let names: Vec<String> = p.iter().map(|(n, _)| n.to_string()).collect();
        let x = Tensor::from_f64([2, 5, 2], &(0..20).map(|i| ((i as f64) * 0.47 + seed as f64).sin()).collect::<Vec<_>>()).unwrap();
        let ps: Vec<Tensor<f64>> = p.iter().map(|(_, t)| t.clone()).chain([x]).collect();
        grad_check(
            |tape, vars| {
                let b = Bound::from_pairs(names.iter().cloned().zip(vars.iter().copied()));
                let xv = vars[names.len()];
                let y = if bi { bilstm_forward(tape, xv, &b, seq)? } else { lstm_forward(tape, xv, &b, seq)? };
                let shape = tape.shape(y)?.to_vec();
                let n: usize = shape.iter().product();
                let w = tape.constant(Tensor::from_f64(shape, &(0..n).map(|i| (i as f64 * 1.3).cos()).collect::<Vec<_>>())?);
                let yw = tape.mul(y, w)?;
                tape.sum(yw)
            },
            &ps,
            1e-6,
        )
        .unwrap()
    }

    #[test]
    fn lstm_grad_check_through_time() {
        for seed in 0..3 {
            for seq in [true, false] {
                let e = check(false, seq, seed);
                assert!(e < 1e-5, "lstm seq={seq} seed={seed}: {e}");
            }
        }
    }

    #[test]
    fn bilstm_grad_check() {
        for seq in [true, false] {
            let e = check(true, seq, 11);
            assert!(e < 1e-4, "bilstm seq={seq}: {e}");
        }
    }
}
