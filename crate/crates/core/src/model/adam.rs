use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Moment accumulators for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.first.iter().map(Vec::len).collect()
    }
}

/// One bias-corrected Adam update. All gradients are checked for finiteness
/// before any parameter moves.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::DimensionMismatch {
            context: "adam_step tensors",
            expected: state.first.len(),
            actual: params.len().max(grads.len()),
        });
    }
    for (t, ((p, g), m)) in params.iter().zip(grads).zip(&state.first).enumerate() {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::DimensionMismatch {
                context: "adam_step tensor",
                expected: m.len(),
                actual: p.len().max(g.len()),
            });
        }
        if let Some(index) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient { tensor: t, index });
        }
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let correction1 = 1.0 - b1.powf(state.step as f64);
    let correction2 = 1.0 - b2.powf(state.step as f64);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}
