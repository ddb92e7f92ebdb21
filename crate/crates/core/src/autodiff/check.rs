//! Central-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which coordinates of each parameter get a numeric derivative.
#[derive(Clone, Copy, Debug)]
pub enum Coords {
    All,
    /// At most `per_param` coordinates per tensor, drawn without replacement.
    Sample { per_param: usize, seed: u64 },
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Max relative error between the tape gradient of `f` and central
/// differences `(f(p+ε) − f(p−ε)) / 2ε` over every parameter coordinate.
pub fn grad_check<F, G>(f: G, params: &[Tensor<F>], epsilon: f64) -> Result<f64>
where
    F: Scalar,
    G: Fn(&mut Tape<F>, &[Var]) -> Result<Var>,
{
    grad_check_coords(f, params, epsilon, Coords::All)
}

pub fn grad_check_coords<F, G>(f: G, params: &[Tensor<F>], epsilon: f64, coords: Coords) -> Result<f64>
where
    F: Scalar,
    G: Fn(&mut Tape<F>, &[Var]) -> Result<Var>,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let eval = |ps: &[Tensor<F>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out)?.item().as_f64())
    };

    let mut rng = match coords {
        Coords::Sample { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Coords::All => None,
    };
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<F>> = params.to_vec();
    for (p, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("leaf gradient").to_f64_vec();
        let n = params[p].len();
        let picked: Vec<usize> = match (coords, rng.as_mut()) {
            (Coords::Sample { per_param, .. }, Some(rng)) if per_param < n => sample(rng, n, per_param).into_vec(),
            _ => (0..n).collect(),
        };
        for i in picked {
            let orig = params[p].data()[i];
            work[p].data_mut()[i] = F::of(orig.as_f64() + epsilon);
            let plus = eval(&work)?;
            work[p].data_mut()[i] = F::of(orig.as_f64() - epsilon);
            let minus = eval(&work)?;
            work[p].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            worst = worst.max(relative_error(analytic[i], numeric));
        }
    }
    Ok(worst)
}
