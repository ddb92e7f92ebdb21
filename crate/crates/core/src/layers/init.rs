//! Parameter initialisation and closed-form parameter counts.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::params::LayerParams;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub mod count {
    pub fn dense(d: usize, h: usize) -> usize {
        d * h + h
    }

    pub fn conv1d(k: usize, cin: usize, cout: usize) -> usize {
        k * cin * cout + cout
    }

    pub fn lstm(d: usize, h: usize) -> usize {
        4 * (h * (d + h) + h)
    }

    pub fn bilstm(d: usize, h: usize) -> usize {
        2 * lstm(d, h)
    }

    pub fn batchnorm(c: usize) -> usize {
        2 * c
    }
}

fn glorot<F: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<F> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite glorot bound");
    let n = shape.iter().product();
    let data = (0..n).map(|_| F::of(dist.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("glorot shape")
}

/// Orthonormal `n×n` matrix (row-major) by modified Gram-Schmidt on a
/// Gaussian draw, with column signs fixed so the result is Haar distributed.
pub fn orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut cols: Vec<Vec<f64>> =
            (0..n).map(|_| (0..n).map(|_| StandardNormal.sample(rng)).collect()).collect();
        let mut degenerate = false;
        for j in 0..n {
            for i in 0..j {
                let (done, rest) = cols.split_at_mut(j);
                let dot: f64 = done[i].iter().zip(&rest[0]).map(|(a, b)| a * b).sum();
                rest[0].iter_mut().zip(&done[i]).for_each(|(x, q)| *x -= dot * q);
            }
            let norm = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-10 {
                degenerate = true;
                break;
            }
            cols[j].iter_mut().for_each(|x| *x /= norm);
        }
        if degenerate {
            continue;
        }
        // second pass cleans up round-off for larger n
        for j in 0..n {
            for i in 0..j {
                let (done, rest) = cols.split_at_mut(j);
                let dot: f64 = done[i].iter().zip(&rest[0]).map(|(a, b)| a * b).sum();
                rest[0].iter_mut().zip(&done[i]).for_each(|(x, q)| *x -= dot * q);
            }
            let norm = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
            cols[j].iter_mut().for_each(|x| *x /= norm);
        }
        let mut out = vec![0.0; n * n];
        for (j, col) in cols.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                out[i * n + j] = v;
            }
        }
        return out;
    }
}

pub fn dense<F: Scalar, R: Rng + ?Sized>(d: usize, h: usize, rng: &mut R) -> LayerParams<F> {
    let mut p = LayerParams::new();
    p.insert("kernel", glorot(&[d, h], d, h, rng));
    p.insert("bias", Tensor::zeros([h]));
    p
}

/// Kernel layout `[k, Cin, Cout]`.
pub fn conv1d<F: Scalar, R: Rng + ?Sized>(k: usize, cin: usize, cout: usize, rng: &mut R) -> LayerParams<F> {
    let mut p = LayerParams::new();
    p.insert("kernel", glorot(&[k, cin, cout], k * cin, k * cout, rng));
    p.insert("bias", Tensor::zeros([cout]));
    p
}

/// Gate order along the `4h` axis: input, forget, cell, output.
pub fn lstm<F: Scalar, R: Rng + ?Sized>(d: usize, h: usize, rng: &mut R) -> LayerParams<F> {
    let mut p = LayerParams::new();
    p.insert("kernel", glorot(&[d, 4 * h], d, 4 * h, rng));
    let mut rec = vec![F::zero(); h * 4 * h];
    for gate in 0..4 {
        let q = orthogonal(h, rng);
        for i in 0..h {
            for j in 0..h {
                rec[i * 4 * h + gate * h + j] = F::of(q[i * h + j]);
            }
        }
    }
    p.insert("recurrent_kernel", Tensor::new([h, 4 * h], rec).expect("recurrent shape"));
    let mut bias = vec![F::zero(); 4 * h];
    bias[h..2 * h].iter_mut().for_each(|b| *b = F::one());
    p.insert("bias", Tensor::new([4 * h], bias).expect("bias shape"));
    p
}

pub fn bilstm<F: Scalar, R: Rng + ?Sized>(d: usize, h: usize, rng: &mut R) -> LayerParams<F> {
    let mut p = LayerParams::new();
    p.merge("fwd", lstm(d, h, rng));
    p.merge("bwd", lstm(d, h, rng));
    p
}

pub fn batchnorm<F: Scalar>(c: usize) -> LayerParams<F> {
    let mut p = LayerParams::new();
    p.insert("gamma", Tensor::full([c], F::one()));
    p.insert("beta", Tensor::zeros([c]));
    p.insert("running_mean", Tensor::zeros([c]));
    p.insert("running_var", Tensor::full([c], F::one()));
    p
}
