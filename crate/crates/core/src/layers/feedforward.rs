use super::{Activation, Bound, Padding};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn activate<F: Scalar>(tape: &mut Tape<F>, x: Var, act: Activation) -> Result<Var> {
    match act {
        Activation::Linear => Ok(x),
        Activation::Relu => tape.relu(x),
    }
}

/// `x·W + b` over the last axis of `x`, then `activation`.
pub fn dense_forward<F: Scalar>(tape: &mut Tape<F>, x: Var, p: &Bound, activation: Activation) -> Result<Var> {
    let (w, b) = (p.var("kernel")?, p.var("bias")?);
    let shape = tape.shape(x)?.to_vec();
    let wshape = tape.shape(w)?.to_vec();
    let d = *shape.last().ok_or(Error::Axis { op: "dense", axis: 0, rank: 0 })?;
    if d != wshape[0] {
        return Err(Error::Shape { op: "dense", lhs: shape, rhs: wshape });
    }
    let rows = shape.iter().product::<usize>() / d;
    let flat = if shape.len() == 2 { x } else { tape.reshape(x, &[rows, d])? };
    let y = tape.matmul(flat, w)?;
    let y = tape.add(y, b)?;
    let y = if shape.len() == 2 {
        y
    } else {
        let mut out = shape.clone();
        *out.last_mut().unwrap() = wshape[1];
        tape.reshape(y, &out)?
    };
    activate(tape, y, activation)
}

/// 1-D convolution of `[B, T, Cin]` with kernel `[k, Cin, Cout]`; the output
/// keeps length `T` and out-of-range taps read zero.
pub fn conv1d_forward<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    p: &Bound,
    padding: Padding,
    dilation: usize,
    activation: Activation,
) -> Result<Var> {
    let (kv, b) = (p.var("kernel")?, p.var("bias")?);
    let shape = tape.shape(x)?.to_vec();
    let kshape = tape.shape(kv)?.to_vec();
    if shape.len() != 3 {
        return Err(Error::Axis { op: "conv1d", axis: 2, rank: shape.len() });
    }
    let (k, cin, cout) = (kshape[0], kshape[1], kshape[2]);
    if shape[2] != cin {
        return Err(Error::Shape { op: "conv1d", lhs: shape, rhs: kshape });
    }
    if dilation == 0 {
        return Err(Error::InvalidArgument("conv1d dilation must be >= 1".into()));
    }
    let pad_left = match padding {
        Padding::Same => {
            if k % 2 == 0 {
                return Err(Error::InvalidArgument(format!("same padding needs an odd kernel, got {k}")));
            }
            (k - 1) / 2 * dilation
        }
        Padding::Causal => (k - 1) * dilation,
    };
    let (batch, t) = (shape[0], shape[1]);
    let cols = tape.im2col(x, k, dilation, pad_left)?;
    let kmat = tape.reshape(kv, &[k * cin, cout])?;
    let y = tape.matmul(cols, kmat)?;
    let y = tape.add(y, b)?;
    let y = tape.reshape(y, &[batch, t, cout])?;
    activate(tape, y, activation)
}
