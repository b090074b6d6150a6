//! Central finite-difference gradient oracle.
//!
//! The numeric side only ever evaluates forward values on frozen graphs, so
//! it shares no code with the backward pass it checks.

use crate::autograd::{Graph, NodeId};
use crate::error::Result;
use crate::params::{Group, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheck {
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
    pub fn relative_error(&self) -> f64 {
        let diff: f64 = self.analytic.iter().zip(&self.numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let na: f64 = self.analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = self.numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let denom = na.max(nn);
        if denom < 1e-300 {
            diff
        } else {
            diff / denom
        }
    }
}

/// Gradient of the scalar `f(x)` with respect to every element of `x`.
pub fn check_input<F>(x: &Tensor, step: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let mut g = Graph::frozen();
    let xi = g.input(x.clone());
    let out = f(&mut g, xi)?;
    g.backward(out)?;
    let analytic = g.grad(xi).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; x.len()]);

    let eval = |t: Tensor| -> Result<f64> {
        let mut g = Graph::frozen();
        let xi = g.constant(t);
        let out = f(&mut g, xi)?;
        Ok(g.value(out).item())
    };
    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * step));
    }
    Ok(GradCheck { analytic, numeric })
}

/// Gradient of `f(store)` with respect to selected elements of parameters.
/// `f` must bind the parameters through `Graph::param`.
pub fn check_params<F>(store: &ParamStore, params: &[(ParamId, usize)], step: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    let all = [Group::Uarse, Group::GenN, Group::GenR, Group::DiscN, Group::DiscR];
    let mut g = Graph::new(&all);
    let out = f(&mut g, store)?;
    g.backward(out)?;
    let grads = g.param_grads();
    let analytic =
        params.iter().map(|&(id, i)| grads.iter().find(|(p, _)| *p == id).map_or(0.0, |(_, t)| t.data()[i])).collect();

    let mut work = store.clone();
    let mut numeric = Vec::with_capacity(params.len());
    for &(id, i) in params {
        let orig = work.get(id).data()[i];
        work.get_mut(id).data_mut()[i] = orig + step;
        let mut g = Graph::frozen();
        let out = f(&mut g, &work)?;
        let plus = g.value(out).item();
        work.get_mut(id).data_mut()[i] = orig - step;
        let mut g = Graph::frozen();
        let out = f(&mut g, &work)?;
        let minus = g.value(out).item();
        work.get_mut(id).data_mut()[i] = orig;
        numeric.push((plus - minus) / (2.0 * step));
    }
    Ok(GradCheck { analytic, numeric })
}

/// A spread of `(param, element)` probes: up to `per_tensor` elements from
/// every parameter tensor.
pub fn sample_param_elements(store: &ParamStore, per_tensor: usize) -> Vec<(ParamId, usize)> {
    let mut out = Vec::new();
    for id in store.ids() {
        let n = store.get(id).len();
        let step = (n / per_tensor.max(1)).max(1);
        out.extend((0..n).step_by(step).take(per_tensor).map(|i| (id, i)));
    }
    out
}
