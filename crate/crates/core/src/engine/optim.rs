//! Adam with decoupled weight decay.

use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// First and second moments plus a per-parameter step count, so the two
/// sides of the game can be stepped independently.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: Vec<u64>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.entries().iter().map(|e| Tensor::zeros(e.tensor.shape())).collect();
        Adam { m: zeros.clone(), v: zeros, t: vec![0; store.len()] }
    }

    /// Update exactly the parameters listed in `grads`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)], h: &AdamHyper) {
        for (id, g) in grads {
            let i = id.index();
            self.t[i] += 1;
            let t = self.t[i] as i32;
            let c1 = 1.0 - h.beta1.powi(t);
            let c2 = 1.0 - h.beta2.powi(t);
            let decay = if store.entry(*id).decay { h.lr * h.weight_decay } else { 0.0 };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = store.get_mut(*id).data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k];
                m[k] = h.beta1 * m[k] + (1.0 - h.beta1) * gk;
                v[k] = h.beta2 * v[k] + (1.0 - h.beta2) * gk * gk;
                let update = (m[k] / c1) / ((v[k] / c2).sqrt() + h.eps);
                p[k] -= h.lr * update + decay * p[k];
            }
        }
    }
}
