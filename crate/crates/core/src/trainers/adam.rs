use serde::{Deserialize, Serialize};

use super::AdamConfig;
use crate::autodiff::Tensor;
use crate::Scalar;

/// First and second moments per parameter tensor, plus the step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<Tensor<T>> = params.into_iter().map(Tensor::zeros_like).collect();
        Self { v: m.clone(), m, t: 0 }
    }
}

/// Advances the moments with `grads` and returns the bias-corrected step
/// `lr * m_hat / (sqrt(v_hat) + eps)` per tensor. Subtract it to descend.
pub fn adam_step<T: Scalar>(state: &mut AdamState<T>, grads: &[Tensor<T>], lr: T, cfg: &AdamConfig) -> Vec<Tensor<T>> {
    assert_eq!(grads.len(), state.m.len(), "gradient count must match Adam state");
    state.t += 1;
    let (b1, b2, eps) = (T::lit(cfg.beta1), T::lit(cfg.beta2), T::lit(cfg.epsilon));
    let bc1 = T::one() - b1.powi(state.t as i32);
    let bc2 = T::one() - b2.powi(state.t as i32);
    let mut steps = Vec::with_capacity(grads.len());
    for ((g, m), v) in grads.iter().zip(&mut state.m).zip(&mut state.v) {
        let mut step = Vec::with_capacity(g.len());
        for ((&gi, mi), vi) in g.data().iter().zip(m.data_mut()).zip(v.data_mut()) {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let mh = *mi / bc1;
            let vh = *vi / bc2;
            step.push(lr * mh / (vh.sqrt() + eps));
        }
        steps.push(Tensor::new(g.shape().to_vec(), step).expect("same shape as gradient"));
    }
    steps
}
