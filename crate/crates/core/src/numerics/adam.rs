use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::params::{Gradients, ParamId, ParamStore};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment buffers and step counter for bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    pub step: u64,
    /// Indexed by `ParamId`; `None` until the parameter first receives a gradient.
    pub first: Vec<Option<Tensor<S>>>,
    pub second: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }
}

/// One Adam update over every trainable parameter that has a gradient.
/// Parameters without a gradient keep their value and moments.
pub fn adam_step<S: Scalar>(
    store: &mut ParamStore<S>,
    grads: &Gradients<S>,
    state: &mut AdamState<S>,
) -> Result<()> {
    for (id, g) in grads.iter() {
        if id.0 >= store.len() {
            return Err(Error::InvalidArgument(format!("gradient for unknown parameter {}", id.0)));
        }
        if g.shape() != store.get(id).shape() {
            return Err(Error::Shape(format!(
                "gradient {:?} for parameter {} of shape {:?}",
                g.shape(),
                store.entry(id).name,
                store.get(id).shape()
            )));
        }
    }
    if state.first.len() < store.len() {
        state.first.resize(store.len(), None);
        state.second.resize(store.len(), None);
    }
    state.step += 1;
    let c = state.config;
    let (b1, b2, eps, lr) = (S::lit(c.beta1), S::lit(c.beta2), S::lit(c.eps), S::lit(c.lr));
    let t = i32::try_from(state.step).unwrap_or(i32::MAX);
    let bc1 = S::one() - b1.powi(t);
    let bc2 = S::one() - b2.powi(t);
    for (id, g) in grads.iter() {
        if !store.is_trainable(id) {
            continue;
        }
        let ParamId(i) = id;
        let shape = g.shape().to_vec();
        let m = state.first[i].get_or_insert_with(|| Tensor::zeros(&shape));
        for (mv, &gv) in m.data_mut().iter_mut().zip(g.data()) {
            *mv = b1 * *mv + (S::one() - b1) * gv;
        }
        let v = state.second[i].get_or_insert_with(|| Tensor::zeros(&shape));
        for (vv, &gv) in v.data_mut().iter_mut().zip(g.data()) {
            *vv = b2 * *vv + (S::one() - b2) * gv * gv;
        }
        let (m, v) = (state.first[i].as_ref().expect("set"), state.second[i].as_ref().expect("set"));
        let w = store.get_mut(id);
        for ((wv, &mv), &vv) in w.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
            let mhat = mv / bc1;
            let vhat = vv / bc2;
            *wv -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
