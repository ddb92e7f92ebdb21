use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::TrainConfig;

/// `initial_lr · decay_rate^(step / decay_steps)`, continuous.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    cfg.initial_lr * cfg.decay_rate.powf(step as f64 / cfg.decay_steps as f64)
}

/// First and second moments per parameter tensor, plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
    pub t: u64,
}

impl<F: Scalar> AdamState<F> {
    /// Zero moments shaped like `params`.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<F>>) -> Self {
        let m: Vec<Tensor<F>> = params.into_iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        Self { v: m.clone(), m, t: 0 }
    }
}

/// One synchronised Adam update of every parameter. `names` label the
/// tensors in error messages.
pub fn adam_step<F: Scalar>(
    params: &mut [&mut Tensor<F>],
    grads: &[&Tensor<F>],
    names: &[String],
    state: &mut AdamState<F>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != names.len() {
        return Err(Error::InvalidArgument(format!(
            "adam: {} params, {} grads, {} moments, {} names",
            params.len(),
            grads.len(),
            state.m.len(),
            names.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::Shape { op: "adam_step", lhs: p.shape().to_vec(), rhs: g.shape().to_vec() });
        }
        if g.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient { param: names[i].clone(), step: state.t + 1 });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (fb1, fb2, feps, flr) = (F::of(b1), F::of(b2), F::of(cfg.adam_epsilon), F::of(lr));
    let (fc1, fc2) = (F::of(c1), F::of(c2));
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = fb1 * m[j] + (F::one() - fb1) * g[j];
            v[j] = fb2 * v[j] + (F::one() - fb2) * g[j] * g[j];
            let mh = m[j] / fc1;
            let vh = v[j] / fc2;
            *w -= flr * mh / (vh.sqrt() + feps);
        }
    }
    Ok(())
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm<F: Scalar>(grads: &mut [Tensor<F>], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.data()).map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = F::of(max_norm / norm);
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= k;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainConfig {
        TrainConfig::default()
    }

    #[test]
    fn schedule_points() {
        let c = cfg();
        assert_eq!(lr_at(0, &c), 0.001);
        assert!((lr_at(30_000, &c) - 0.0002).abs() < 1e-15);
        assert!((lr_at(15_000, &c) - 4.4721e-4).abs() < 1e-8);
        assert!(lr_at(1, &c) < lr_at(0, &c));
    }

    /// Independent scalar Adam.
    fn scalar_adam(theta: f64, gs: &[f64], lr: f64) -> f64 {
        let (mut th, mut m, mut v) = (theta, 0.0, 0.0);
        for (k, g) in gs.iter().enumerate() {
            let t = (k + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            th -= lr * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
        }
        th
    }

    #[test]
    fn two_steps_match_scalar_oracle() {
        let mut p = Tensor::<f64>::new([3], vec![0.5, -1.0, 2.0]).unwrap();
        let g = Tensor::<f64>::new([3], vec![0.3, -2.0, 1e-3]).unwrap();
        let mut st = AdamState::new([&p]);
        let names = vec!["w".to_string()];
        for _ in 0..2 {
            adam_step(&mut [&mut p], &[&g], &names, &mut st, 0.01, &cfg()).unwrap();
        }
        assert_eq!(st.t, 2);
        for (j, (&th0, &gj)) in [0.5, -1.0, 2.0].iter().zip(g.data()).enumerate() {
            assert!((p.data()[j] - scalar_adam(th0, &[gj, gj], 0.01)).abs() < 1e-12);
        }
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        let mut p = Tensor::<f64>::new([2], vec![1.0, 1.0]).unwrap();
        let g = Tensor::<f64>::new([2], vec![5.0, -0.01]).unwrap();
        let mut st = AdamState::new([&p]);
        adam_step(&mut [&mut p], &[&g], &["w".into()], &mut st, 1e-3, &cfg()).unwrap();
        for (j, gj) in g.data().iter().enumerate() {
            let want = 1e-3 * gj.abs() / (gj.abs() + 1e-8);
            assert!(((1.0 - p.data()[j]).abs() - want).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::<f32>::new([2], vec![1.0, -3.0]).unwrap();
        let g = Tensor::<f32>::zeros([2]);
        let mut st = AdamState::new([&p]);
        adam_step(&mut [&mut p], &[&g], &["w".into()], &mut st, 1e-3, &cfg()).unwrap();
        assert_eq!(p.data(), &[1.0, -3.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn rejects_bad_gradients() {
        let mut p = Tensor::<f64>::zeros([2]);
        let mut st = AdamState::new([&p]);
        let nan = Tensor::<f64>::new([2], vec![0.0, f64::NAN]).unwrap();
        match adam_step(&mut [&mut p], &[&nan], &["layers.3.kernel".into()], &mut st, 1e-3, &cfg()) {
            Err(Error::NonFiniteGradient { param, step }) => {
                assert_eq!(param, "layers.3.kernel");
                assert_eq!(step, 1);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(st.t, 0);
        let wrong = Tensor::<f64>::zeros([3]);
        assert!(adam_step(&mut [&mut p], &[&wrong], &["w".into()], &mut st, 1e-3, &cfg()).is_err());
    }

    #[test]
    fn clipping() {
        let mut g = vec![Tensor::<f64>::new([2], vec![3.0, 0.0]).unwrap(), Tensor::<f64>::new([1], vec![4.0]).unwrap()];
        assert_eq!(clip_global_norm(&mut g, 10.0), 5.0);
        assert_eq!(g[0].data(), &[3.0, 0.0]);
        clip_global_norm(&mut g, 1.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15 && (g[1].data()[0] - 0.8).abs() < 1e-15);
    }
}
