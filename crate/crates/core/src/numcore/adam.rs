use crate::error::{ensure, Result};

use super::{Real, Tensor};

/// Per-parameter Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Real> AdamState<T> {
    /// Fresh state with beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
    pub fn new(numel: usize) -> Self {
        Self::with_hyper(numel, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(numel: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            m: vec![T::zero(); numel],
            v: vec![T::zero(); numel],
            t: 0,
            beta1,
            beta2,
            epsilon,
        }
    }
}

/// One bias-corrected Adam update in place.
///
/// When `update_mask` is given, elements flagged `false` keep their value and
/// moments untouched, so frozen weights stay bitwise identical.
pub fn adam_step<T: Real>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    state: &mut AdamState<T>,
    lr: f64,
    update_mask: Option<&[bool]>,
) -> Result<()> {
    ensure!(
        param.shape() == grad.shape(),
        Shape,
        "param {:?} vs grad {:?}",
        param.shape(),
        grad.shape()
    );
    ensure!(
        state.m.len() == param.numel() && state.v.len() == param.numel(),
        Shape,
        "adam state holds {} moments for {} elements",
        state.m.len(),
        param.numel()
    );
    if let Some(mask) = update_mask {
        ensure!(mask.len() == param.numel(), Shape, "update mask length");
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let c1 = T::of(1.0 - state.beta1.powi(t));
    let c2 = T::of(1.0 - state.beta2.powi(t));
    let (lr, eps) = (T::of(lr), T::of(state.epsilon));
    let one = T::one();
    for (i, (p, &g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
        if let Some(mask) = update_mask {
            if !mask[i] {
                continue;
            }
        }
        let m = b1 * state.m[i] + (one - b1) * g;
        let v = b2 * state.v[i] + (one - b2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let m_hat = m / c1;
        let v_hat = v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
