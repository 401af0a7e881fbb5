use serde::{Deserialize, Serialize};

use super::params::check_aligned;
use super::{DenseMatrix, NumError, ParamSet};

/// Adam moments and step counter for one [`ParamSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: u64,
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
}

impl AdamState {
    pub fn new(lr: f32, params: &ParamSet) -> Self {
        let zeros: Vec<_> = params
            .values()
            .iter()
            .map(|p| DenseMatrix::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[DenseMatrix] {
        &self.m
    }

    pub fn second_moments(&self) -> &[DenseMatrix] {
        &self.v
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut ParamSet, grads: &[DenseMatrix], state: &mut AdamState) -> Result<(), NumError> {
    check_aligned(params, grads)?;
    if state.m.len() != params.len() {
        return Err(NumError::dim("adam_step", (state.m.len(), 1), (params.len(), 1)));
    }
    state.t += 1;
    let (b1, b2) = (state.beta1 as f64, state.beta2 as f64);
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    let (lr, eps) = (state.lr as f64, state.eps as f64);
    for (k, (p, g)) in params.values_mut().iter_mut().zip(grads).enumerate() {
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            let gi = gi as f64;
            let mn = b1 * *mi as f64 + (1.0 - b1) * gi;
            let vn = b2 * *vi as f64 + (1.0 - b2) * gi * gi;
            *mi = mn as f32;
            *vi = vn as f32;
            let update = lr * (mn / bc1) / ((vn / bc2).sqrt() + eps);
            *pi = (*pi as f64 - update) as f32;
        }
        if !p.is_finite() {
            return Err(NumError::NonFinite { op: "adam_step", index: k });
        }
    }
    Ok(())
}
