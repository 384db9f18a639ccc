use super::params::{GradStore, ParamStore};
use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// First/second moment estimates for bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor2>,
    pub v: Vec<Tensor2>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor2::zeros(t.rows(), t.cols())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub fn adam_step(params: &mut ParamStore, grads: &GradStore, state: &mut AdamState, lr: f64) -> Result<()> {
    if !grads.is_congruent(params) || state.m.len() != params.len() {
        return Err(Error::shape("adam_step", params.len(), grads.len()));
    }
    for ((p, m), v) in params.tensors().iter().zip(&state.m).zip(&state.v) {
        if p.shape() != m.shape() || p.shape() != v.shape() {
            return Err(Error::shape("adam moments", format!("{:?}", p.shape()), format!("{:?}", m.shape())));
        }
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let g = grads.tensors()[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (k, w) in p.data_mut().iter_mut().enumerate() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            *w -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}
