//! AdamW with bias correction and decoupled weight decay.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub step: u64,
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &[Tensor<S>]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
        }
    }
}

/// Applies one AdamW update to `params` in place.
pub fn adam_step<S: Scalar>(
    params: &mut [Tensor<S>],
    grads: &[Tensor<S>],
    state: &mut AdamState<S>,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid(format!(
            "adam_step: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (S::lit(cfg.beta1), S::lit(cfg.beta2));
    let bc1 = S::one() - b1.powi(t);
    let bc2 = S::one() - b2.powi(t);
    let lr = S::lit(cfg.lr);
    let eps = S::lit(cfg.eps);
    let decay = S::one() - lr * S::lit(cfg.weight_decay);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let mut pd = p.data().to_vec();
        let mut md = m.data().to_vec();
        let mut vd = v.data().to_vec();
        for i in 0..pd.len() {
            let gi = g.data()[i];
            md[i] = b1 * md[i] + (S::one() - b1) * gi;
            vd[i] = b2 * vd[i] + (S::one() - b2) * gi * gi;
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            pd[i] = pd[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
        *p = Tensor::new(p.shape().to_vec(), pd)?;
        *m = Tensor::new(m.shape().to_vec(), md)?;
        *v = Tensor::new(v.shape().to_vec(), vd)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_params_and_decay_moments() {
        let mut params = vec![Tensor::<f64>::new([2], vec![1.0, -2.0]).unwrap()];
        let mut state = AdamState::new(&params);
        state.m[0] = Tensor::new([2], vec![0.5, 0.5]).unwrap();
        state.v[0] = Tensor::new([2], vec![0.25, 0.25]).unwrap();
        state.step = 10;
        let before = params.clone();
        let grads = vec![Tensor::zeros([2])];
        let cfg = AdamConfig::default();
        adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        assert_eq!(state.m[0].data(), &[0.45, 0.45]);
        assert!((state.v[0].data()[0] - 0.25 * 0.999).abs() < 1e-15);

        let mut params = before.clone();
        let mut fresh = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut fresh, &cfg).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn single_step_matches_hand_derivation() {
        // m = (1-b1) g, v = (1-b2) g^2, m_hat = g, v_hat = g^2,
        // so the first step moves by lr * g / (|g| + eps).
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut params = vec![Tensor::<f64>::scalar(1.0)];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &[Tensor::scalar(0.5)], &mut state, &cfg).unwrap();
        let expected = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((params[0].data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn minimizes_a_parabola() {
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        let mut params = vec![Tensor::<f64>::scalar(1.0)];
        let mut state = AdamState::new(&params);
        for _ in 0..500 {
            let x = params[0].data()[0];
            adam_step(&mut params, &[Tensor::scalar(2.0 * x)], &mut state, &cfg).unwrap();
        }
        assert!(params[0].data()[0].abs() < 1e-2);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        let mut params = vec![Tensor::<f64>::scalar(2.0)];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &[Tensor::scalar(0.0)], &mut state, &cfg).unwrap();
        assert!((params[0].data()[0] - 2.0 * 0.95).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = vec![Tensor::<f64>::zeros([2])];
        let mut state = AdamState::new(&params);
        let err = adam_step(&mut params, &[Tensor::zeros([3])], &mut state, &AdamConfig::default());
        assert!(matches!(err, Err(Error::ShapeMismatch { .. })));
    }
}
