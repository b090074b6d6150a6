//! Building blocks shared by the networks.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::params::{Group, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Square-kernel convolution with bias and same-style padding (`k / 2`).
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: Group,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        let weight = store.push(
            format!("{name}.weight"),
            group,
            true,
            Tensor::zeros(&[out_channels, in_channels, kernel, kernel]),
        );
        let bias = store.push(format!("{name}.bias"), group, false, Tensor::zeros(&[out_channels]));
        Conv2d { weight, bias, in_channels, out_channels, kernel, stride }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let (c, _, _) = g.value(x).chw()?;
        if c != self.in_channels {
            return Err(Error::dim(format!(
                "{} expects {} input channels, got {c}",
                store.entry(self.weight).name,
                self.in_channels
            )));
        }
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(x, w, Some(b), self.stride, self.kernel / 2)
    }
}

/// Dual-path residual/dense unit.
///
/// Residual path: `conv -> relu -> ... -> conv`, added to the input.
/// Dense path: each layer sees the input concatenated with all earlier dense
/// features; the dense features are concatenated and projected back to the
/// block width by a 1x1 convolution. Output = `x + residual + projection`.
#[derive(Clone, Debug)]
pub struct HybridBlock {
    pub width: usize,
    residual: Vec<Conv2d>,
    dense: Vec<Conv2d>,
    projection: Conv2d,
}

impl HybridBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: Group,
        width: usize,
        residual_convs: usize,
        dense_layers: usize,
    ) -> Self {
        let residual = (0..residual_convs)
            .map(|i| Conv2d::new(store, &format!("{name}.res{i}"), group, width, width, 3, 1))
            .collect();
        let dense = (0..dense_layers)
            .map(|i| Conv2d::new(store, &format!("{name}.dense{i}"), group, width * (i + 1), width, 3, 1))
            .collect();
        let projection = Conv2d::new(store, &format!("{name}.proj"), group, width * dense_layers, width, 1, 1);
        HybridBlock { width, residual, dense, projection }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let (c, _, _) = g.value(x).chw()?;
        if c != self.width {
            return Err(Error::dim(format!("hybrid block of width {} got {c} channels", self.width)));
        }
        let mut out = x;
        if !self.residual.is_empty() {
            let mut r = x;
            for (i, conv) in self.residual.iter().enumerate() {
                r = conv.forward(g, store, r)?;
                if i + 1 < self.residual.len() {
                    r = g.relu(r);
                }
            }
            out = g.add(out, r)?;
        }
        if !self.dense.is_empty() {
            let mut features = Vec::with_capacity(self.dense.len());
            for conv in &self.dense {
                let mut parts = vec![x];
                parts.extend(&features);
                let inp = if parts.len() == 1 { x } else { g.concat_channels(&parts)? };
                let f = conv.forward(g, store, inp)?;
                features.push(g.relu(f));
            }
            let cat = if features.len() == 1 { features[0] } else { g.concat_channels(&features)? };
            let proj = self.projection.forward(g, store, cat)?;
            out = g.add(out, proj)?;
        }
        Ok(out)
    }
}

/// Activation of the LSTM candidate `g_t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateActivation {
    Sigmoid,
    Tanh,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub hidden: NodeId,
    pub cell: NodeId,
}

/// Convolutional LSTM cell.
///
/// The four gate convolutions `W_i, W_f, W_g, W_o` over `[x, H_{t-1}]` are
/// stored as one `[4w, 2w, 3, 3]` kernel whose output-channel blocks are, in
/// order, input, forget, candidate and output gates.
#[derive(Clone, Debug)]
pub struct ConvLstm {
    pub width: usize,
    pub gates: Conv2d,
    pub candidate: CandidateActivation,
}

pub const GATE_INPUT: usize = 0;
pub const GATE_FORGET: usize = 1;
pub const GATE_CANDIDATE: usize = 2;
pub const GATE_OUTPUT: usize = 3;

impl ConvLstm {
    pub fn new(store: &mut ParamStore, name: &str, group: Group, width: usize, candidate: CandidateActivation) -> Self {
        let gates = Conv2d::new(store, &format!("{name}.gates"), group, 2 * width, 4 * width, 3, 1);
        ConvLstm { width, gates, candidate }
    }

    pub fn zero_state(&self, g: &mut Graph, height: usize, width: usize) -> LstmState {
        let hidden = g.constant(Tensor::zeros(&[self.width, height, width]));
        let cell = g.constant(Tensor::zeros(&[self.width, height, width]));
        LstmState { hidden, cell }
    }

    /// One recurrence step; returns `H_t` and the next state.
    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: NodeId, state: LstmState) -> Result<(NodeId, LstmState)> {
        let xs = g.value(x).shape().to_vec();
        let hs = g.value(state.hidden).shape().to_vec();
        if xs != hs || g.value(state.cell).shape() != hs.as_slice() {
            return Err(Error::dim(format!("LSTM input {xs:?} and state {hs:?} are not aligned")));
        }
        let joined = g.concat_channels(&[x, state.hidden])?;
        let z = self.gates.forward(g, store, joined)?;
        let w = self.width;
        let zi = g.slice_channels(z, GATE_INPUT * w, w)?;
        let zf = g.slice_channels(z, GATE_FORGET * w, w)?;
        let zg = g.slice_channels(z, GATE_CANDIDATE * w, w)?;
        let zo = g.slice_channels(z, GATE_OUTPUT * w, w)?;
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let cand = match self.candidate {
            CandidateActivation::Sigmoid => g.sigmoid(zg),
            CandidateActivation::Tanh => g.tanh(zg),
        };
        let o = g.sigmoid(zo);
        let keep = g.mul(f, state.cell)?;
        let write = g.mul(i, cand)?;
        let cell = g.add(keep, write)?;
        let squashed = g.tanh(cell);
        let hidden = g.mul(o, squashed)?;
        Ok((hidden, LstmState { hidden, cell }))
    }
}
