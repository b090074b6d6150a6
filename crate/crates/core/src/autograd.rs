//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is a tape: every op appends a node holding its forward value,
//! and [`Graph::backward`] walks the tape in reverse accumulating gradients.
//! Parameters are bound from a [`ParamStore`] once per graph, so a network
//! applied several times (the shared attention extractor, a discriminator
//! scoring real and fake images) accumulates into a single gradient.
//!
//! All kernels are single-threaded and iterate in a fixed order, so results
//! are bitwise reproducible.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::{Group, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { input: NodeId, weight: NodeId, bias: Option<NodeId>, stride: usize, pad: usize },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Concat(Vec<NodeId>),
    SliceChannels { input: NodeId, start: usize },
    BroadcastChannels(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    LeakyRelu(NodeId, f64),
    AvgPool2(NodeId),
    Upsample2(NodeId),
    PadReplicate(NodeId),
    Crop(NodeId),
    Abs(NodeId),
    Square(NodeId),
    Ln(NodeId),
    Clamp(NodeId, f64, f64),
    Mean(NodeId),
    Combine(Vec<(NodeId, f64)>),
    GmmNll { input: NodeId, weights: Vec<f64>, variances: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Graph {
    nodes: Vec<Node>,
    trainable: Vec<Group>,
    bound: BTreeMap<ParamId, NodeId>,
    grads: Vec<Option<Tensor>>,
}

impl Graph {
    /// A graph whose parameters from `trainable` groups receive gradients.
    /// Parameters of other groups are bound as constants.
    pub fn new(trainable: &[Group]) -> Self {
        Graph { nodes: Vec::new(), trainable: trainable.to_vec(), bound: BTreeMap::new(), grads: Vec::new() }
    }

    /// A graph in which no parameter is trainable.
    pub fn frozen() -> Self {
        Self::new(&[])
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable leaf (gradient is available after `backward`).
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&n) = self.bound.get(&id) {
            return n;
        }
        let trainable = self.trainable.contains(&store.entry(id).group);
        let n = self.push(store.get(id).clone(), Op::Leaf, trainable);
        self.bound.insert(id, n);
        n
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize, pad: usize) -> Result<NodeId> {
        let (ci, h, wd) = self.value(x).chw()?;
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 4 || ws[1] != ci || ws[2] != ws[3] {
            return Err(Error::dim(format!("conv weight {ws:?} incompatible with input channels {ci}")));
        }
        let (co, k) = (ws[0], ws[2]);
        if h + 2 * pad < k || wd + 2 * pad < k || stride == 0 {
            return Err(Error::dim(format!("input {h}x{wd} too small for kernel {k} with padding {pad}")));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let p = ho * wo;
        let kk = ci * k * k;
        let col = im2col(self.value(x).data(), ci, h, wd, k, stride, pad, ho, wo);
        let mut out = matmul(co, kk, p, self.value(w).data(), (kk, 1), &col, (p, 1));
        if let Some(b) = b {
            let bv = self.value(b).data();
            if bv.len() != co {
                return Err(Error::dim(format!("conv bias has {} entries, expected {co}", bv.len())));
            }
            for (row, &bias) in out.chunks_mut(p).zip(bv) {
                row.iter_mut().for_each(|v| *v += bias);
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let value = Tensor::new(vec![co, ho, wo], out)?;
        Ok(self.push(value, Op::Conv2d { input: x, weight: w, bias: b, stride, pad }, rg))
    }

    fn binary(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), f)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        self.unary(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.leaky_relu(a, 0.0)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Natural log. Inputs must be strictly positive.
    pub fn ln(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).data().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Numeric("log of a non-positive value".into()));
        }
        Ok(self.unary(a, Op::Ln(a), f64::ln))
    }

    /// Elementwise clamp; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(a).mean());
        let rg = self.rg(a);
        self.push(value, Op::Mean(a), rg)
    }

    /// `Σ coef_i · node_i` over same-shaped nodes.
    pub fn combine(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        let first = terms.first().ok_or_else(|| Error::dim("empty combination"))?;
        let mut acc = Tensor::zeros(self.value(first.0).shape());
        for &(id, c) in terms {
            self.value(id).expect_same_shape(&acc)?;
            acc.scale_add_assign(self.value(id), c);
        }
        let rg = terms.iter().any(|&(id, _)| self.rg(id));
        Ok(self.push(acc, Op::Combine(terms.to_vec()), rg))
    }

    pub fn concat_channels(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let (_, h, w) = self.value(parts[0]).chw()?;
        let mut c_total = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (c, ph, pw) = self.value(p).chw()?;
            if (ph, pw) != (h, w) {
                return Err(Error::dim(format!("concat spatial mismatch: {h}x{w} vs {ph}x{pw}")));
            }
            c_total += c;
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(vec![c_total, h, w], data)?, Op::Concat(parts.to_vec()), rg))
    }

    pub fn slice_channels(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (c, h, w) = self.value(a).chw()?;
        if start + len > c {
            return Err(Error::dim(format!("channel slice {start}..{} out of {c}", start + len)));
        }
        let data = self.value(a).data()[start * h * w..(start + len) * h * w].to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![len, h, w], data)?, Op::SliceChannels { input: a, start }, rg))
    }

    /// Repeat a single-channel map across `channels`.
    pub fn broadcast_channels(&mut self, a: NodeId, channels: usize) -> Result<NodeId> {
        let (c, h, w) = self.value(a).chw()?;
        if c != 1 {
            return Err(Error::dim(format!("broadcast expects 1 channel, got {c}")));
        }
        let data = self.value(a).data().repeat(channels);
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![channels, h, w], data)?, Op::BroadcastChannels(a), rg))
    }

    /// 2x2 average pooling with stride 2 (odd trailing rows/columns dropped).
    pub fn avg_pool2(&mut self, a: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.value(a).chw()?;
        let (ho, wo) = (h / 2, w / 2);
        if ho == 0 || wo == 0 {
            return Err(Error::dim(format!("cannot pool {h}x{w}")));
        }
        let x = self.value(a).data();
        let mut out = vec![0.0; c * ho * wo];
        for ch in 0..c {
            for y in 0..ho {
                for xx in 0..wo {
                    let base = ch * h * w + 2 * y * w + 2 * xx;
                    out[ch * ho * wo + y * wo + xx] = 0.25 * (x[base] + x[base + 1] + x[base + w] + x[base + w + 1]);
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![c, ho, wo], out)?, Op::AvgPool2(a), rg))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, a: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.value(a).chw()?;
        let x = self.value(a).data();
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = vec![0.0; c * ho * wo];
        for ch in 0..c {
            for y in 0..ho {
                for xx in 0..wo {
                    out[ch * ho * wo + y * wo + xx] = x[ch * h * w + (y / 2) * w + xx / 2];
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![c, ho, wo], out)?, Op::Upsample2(a), rg))
    }

    /// Extend to `height x width` by replicating the last row and column.
    pub fn pad_replicate(&mut self, a: NodeId, height: usize, width: usize) -> Result<NodeId> {
        let (c, h, w) = self.value(a).chw()?;
        if height < h || width < w {
            return Err(Error::dim("padding target smaller than input"));
        }
        let x = self.value(a).data();
        let mut out = vec![0.0; c * height * width];
        for ch in 0..c {
            for y in 0..height {
                for xx in 0..width {
                    out[ch * height * width + y * width + xx] = x[ch * h * w + y.min(h - 1) * w + xx.min(w - 1)];
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![c, height, width], out)?, Op::PadReplicate(a), rg))
    }

    /// Keep the top-left `height x width` window.
    pub fn crop(&mut self, a: NodeId, height: usize, width: usize) -> Result<NodeId> {
        let (c, h, w) = self.value(a).chw()?;
        if height > h || width > w {
            return Err(Error::dim("crop larger than input"));
        }
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(c * height * width);
        for ch in 0..c {
            for y in 0..height {
                let row = ch * h * w + y * w;
                out.extend_from_slice(&x[row..row + width]);
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![c, height, width], out)?, Op::Crop(a), rg))
    }

    /// Mean per-element negative log-likelihood under a zero-mean Gaussian
    /// mixture with the given weights and variances.
    pub fn gmm_nll(&mut self, a: NodeId, weights: &[f64], variances: &[f64]) -> Result<NodeId> {
        if weights.len() != variances.len() || weights.is_empty() {
            return Err(Error::Parameter("mixture weights and variances must be non-empty and equal length".into()));
        }
        if variances.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Parameter("mixture variances must be positive".into()));
        }
        let x = self.value(a);
        let nll = x.data().iter().map(|&s| -log_mixture_density(s, weights, variances)).sum::<f64>() / x.len() as f64;
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::scalar(nll),
            Op::GmmNll { input: a, weights: weights.to_vec(), variances: variances.to_vec() },
            rg,
        ))
    }

    /// Backpropagate from a scalar node.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::dim("backward requires a scalar root"));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.backprop_node(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        self.grads = grads;
        Ok(())
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradients of every trainable bound parameter, ordered by id.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor)> {
        self.bound
            .iter()
            .filter(|(_, n)| self.nodes[n.0].requires_grad)
            .map(|(&p, &n)| (p, self.grad(n).cloned().unwrap_or_else(|| Tensor::zeros(self.value(n).shape()))))
            .collect()
    }

    fn backprop_node(&self, i: usize, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, stride, pad } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (ci, h, wd) = x.chw().expect("conv input");
                let (co, k) = (w.shape()[0], w.shape()[2]);
                let (_, ho, wo) = y.chw().expect("conv output");
                let p = ho * wo;
                let kk = ci * k * k;
                let dy = gy.data();
                if let Some(b) = bias {
                    if self.rg(*b) {
                        let db: Vec<f64> = dy.chunks(p).map(|r| r.iter().sum()).collect();
                        accumulate(grads, *b, Tensor::new(vec![co], db).expect("bias shape"));
                    }
                }
                let need_w = self.rg(*weight);
                let need_x = self.rg(*input);
                if need_w || need_x {
                    let col = im2col(x.data(), ci, h, wd, k, *stride, *pad, ho, wo);
                    if need_w {
                        let dw = matmul(co, p, kk, dy, (p, 1), &col, (1, p));
                        accumulate(grads, *weight, Tensor::new(w.shape().to_vec(), dw).expect("weight shape"));
                    }
                    if need_x {
                        let dcol = matmul(kk, co, p, w.data(), (1, kk), dy, (p, 1));
                        let dx = col2im(&dcol, ci, h, wd, k, *stride, *pad, ho, wo);
                        accumulate(grads, *input, Tensor::new(vec![ci, h, wd], dx).expect("input shape"));
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, || gy.clone());
                self.acc(grads, *b, || gy.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, || gy.clone());
                self.acc(grads, *b, || gy.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, || gy.zip_map(vb, |g, v| g * v).expect("mul"));
                self.acc(grads, *b, || gy.zip_map(va, |g, v| g * v).expect("mul"));
            }
            Op::Scale(a, s) => self.acc(grads, *a, || gy.map(|g| g * s)),
            Op::AddScalar(a) => self.acc(grads, *a, || gy.clone()),
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    let shape = self.value(p).shape().to_vec();
                    self.acc(grads, p, || Tensor::new(shape, gy.data()[offset..offset + n].to_vec()).expect("concat"));
                    offset += n;
                }
            }
            Op::SliceChannels { input, start } => {
                let xs = self.value(*input).shape().to_vec();
                let plane = xs[1] * xs[2];
                self.acc(grads, *input, || {
                    let mut g = Tensor::zeros(&xs);
                    g.data_mut()[start * plane..start * plane + gy.len()].copy_from_slice(gy.data());
                    g
                });
            }
            Op::BroadcastChannels(a) => {
                let n = self.value(*a).len();
                let shape = self.value(*a).shape().to_vec();
                self.acc(grads, *a, || {
                    let mut d = vec![0.0; n];
                    for chunk in gy.data().chunks(n) {
                        d.iter_mut().zip(chunk).for_each(|(s, v)| *s += v);
                    }
                    Tensor::new(shape, d).expect("broadcast")
                });
            }
            Op::Sigmoid(a) => self.acc(grads, *a, || gy.zip_map(y, |g, s| g * s * (1.0 - s)).expect("sigmoid")),
            Op::Tanh(a) => self.acc(grads, *a, || gy.zip_map(y, |g, t| g * (1.0 - t * t)).expect("tanh")),
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                self.acc(grads, *a, || gy.zip_map(x, |g, v| if v > 0.0 { g } else { g * slope }).expect("relu"));
            }
            Op::AvgPool2(a) => {
                let (c, h, w) = self.value(*a).chw().expect("pool");
                let (_, ho, wo) = y.chw().expect("pool");
                self.acc(grads, *a, || {
                    let mut d = vec![0.0; c * h * w];
                    let g = gy.data();
                    for ch in 0..c {
                        for yy in 0..ho {
                            for xx in 0..wo {
                                let v = 0.25 * g[ch * ho * wo + yy * wo + xx];
                                let base = ch * h * w + 2 * yy * w + 2 * xx;
                                d[base] += v;
                                d[base + 1] += v;
                                d[base + w] += v;
                                d[base + w + 1] += v;
                            }
                        }
                    }
                    Tensor::new(vec![c, h, w], d).expect("pool")
                });
            }
            Op::Upsample2(a) => {
                let (c, h, w) = self.value(*a).chw().expect("upsample");
                self.acc(grads, *a, || {
                    let mut d = vec![0.0; c * h * w];
                    let g = gy.data();
                    let (ho, wo) = (2 * h, 2 * w);
                    for ch in 0..c {
                        for yy in 0..ho {
                            for xx in 0..wo {
                                d[ch * h * w + (yy / 2) * w + xx / 2] += g[ch * ho * wo + yy * wo + xx];
                            }
                        }
                    }
                    Tensor::new(vec![c, h, w], d).expect("upsample")
                });
            }
            Op::PadReplicate(a) => {
                let (c, h, w) = self.value(*a).chw().expect("pad");
                let (_, ho, wo) = y.chw().expect("pad");
                self.acc(grads, *a, || {
                    let mut d = vec![0.0; c * h * w];
                    let g = gy.data();
                    for ch in 0..c {
                        for yy in 0..ho {
                            for xx in 0..wo {
                                d[ch * h * w + yy.min(h - 1) * w + xx.min(w - 1)] += g[ch * ho * wo + yy * wo + xx];
                            }
                        }
                    }
                    Tensor::new(vec![c, h, w], d).expect("pad")
                });
            }
            Op::Crop(a) => {
                let (c, h, w) = self.value(*a).chw().expect("crop");
                let (_, ho, wo) = y.chw().expect("crop");
                self.acc(grads, *a, || {
                    let mut d = vec![0.0; c * h * w];
                    for ch in 0..c {
                        for yy in 0..ho {
                            let src = ch * ho * wo + yy * wo;
                            let dst = ch * h * w + yy * w;
                            d[dst..dst + wo].copy_from_slice(&gy.data()[src..src + wo]);
                        }
                    }
                    Tensor::new(vec![c, h, w], d).expect("crop")
                });
            }
            Op::Abs(a) => {
                let x = self.value(*a);
                self.acc(grads, *a, || gy.zip_map(x, |g, v| g * sign(v)).expect("abs"));
            }
            Op::Square(a) => {
                let x = self.value(*a);
                self.acc(grads, *a, || gy.zip_map(x, |g, v| 2.0 * g * v).expect("square"));
            }
            Op::Ln(a) => {
                let x = self.value(*a);
                self.acc(grads, *a, || gy.zip_map(x, |g, v| g / v).expect("ln"));
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a);
                self.acc(grads, *a, || gy.zip_map(x, |g, v| if v < *lo || v > *hi { 0.0 } else { g }).expect("clamp"));
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                let g = gy.item() / x.len() as f64;
                self.acc(grads, *a, || Tensor::full(x.shape(), g));
            }
            Op::Combine(terms) => {
                for &(id, c) in terms {
                    self.acc(grads, id, || gy.map(|g| g * c));
                }
            }
            Op::GmmNll { input, weights, variances } => {
                let x = self.value(*input);
                let scale = gy.item() / x.len() as f64;
                self.acc(grads, *input, || x.map(|s| scale * gmm_score(s, weights, variances)));
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], id: NodeId, g: impl FnOnce() -> Tensor) {
        if self.rg(id) {
            accumulate(grads, id, g());
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log Σ_k π_k N(s | 0, σ²_k)`, evaluated with log-sum-exp.
pub fn log_mixture_density(s: f64, weights: &[f64], variances: &[f64]) -> f64 {
    let logs: Vec<f64> = weights
        .iter()
        .zip(variances)
        .map(|(&pi, &var)| pi.ln() - 0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * s * s / var)
        .collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

/// `-d/ds log p(s)` for the zero-mean mixture: `Σ_k γ_k(s) · s / σ²_k`.
fn gmm_score(s: f64, weights: &[f64], variances: &[f64]) -> f64 {
    let logs: Vec<f64> = weights
        .iter()
        .zip(variances)
        .map(|(&pi, &var)| pi.ln() - 0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * s * s / var)
        .collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let norm: f64 = logs.iter().map(|l| (l - m).exp()).sum();
    logs.iter().zip(variances).map(|(l, var)| (l - m).exp() / norm * s / var).sum()
}

/// Output columns `[lo, hi)` whose tap `kx` lands inside a row of width `w`.
fn valid_cols(kx: usize, w: usize, stride: usize, pad: usize, wo: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kx).div_ceil(stride);
    let hi = if w + pad > kx { ((w + pad - kx - 1) / stride + 1).min(wo) } else { 0 };
    (lo.min(hi), hi)
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<f64> {
    // Every element is written exactly once, row by row, so the buffer is
    // never zero-filled up front.
    let mut col = Vec::with_capacity(c * k * k * ho * wo);
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let (lo, hi) = valid_cols(kx, w, stride, pad, wo);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize || lo == hi {
                        col.resize(col.len() + wo, 0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..][..w];
                    col.resize(col.len() + lo, 0.0);
                    let first = lo * stride + kx - pad;
                    if stride == 1 {
                        col.extend_from_slice(&src[first..first + hi - lo]);
                    } else {
                        col.extend(src[first..].iter().step_by(stride).take(hi - lo));
                    }
                    col.resize(col.len() + wo - hi, 0.0);
                }
            }
        }
    }
    col
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    col: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<f64> {
    let p = ho * wo;
    let mut x = vec![0.0; c * h * w];
    for ch in 0..c {
        let plane = &mut x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let (lo, hi) = valid_cols(kx, w, stride, pad, wo);
                if lo == hi {
                    continue;
                }
                let row = &col[((ch * k + ky) * k + kx) * p..][..p];
                let first = lo * stride + kx - pad;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..][..w];
                    let src = &row[oy * wo + lo..oy * wo + hi];
                    if stride == 1 {
                        dst[first..first + src.len()].iter_mut().zip(src).for_each(|(d, v)| *d += v);
                    } else {
                        dst[first..].iter_mut().step_by(stride).zip(src).for_each(|(d, v)| *d += v);
                    }
                }
            }
        }
    }
    x
}

/// `A (m x k) · B (k x n)` as a dense row-major `m x n` buffer, with
/// `(row, col)` strides for A and B.
fn matmul(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize)) -> Vec<f64> {
    let extent = |rows: usize, cols: usize, (r, c): (usize, usize)| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * r + (cols - 1) * c + 1
        }
    };
    assert!(a.len() >= extent(m, k, sa) && b.len() >= extent(k, n, sb), "matmul operand too short");
    let mut c = Vec::with_capacity(m * n);
    // SAFETY: A and B cover their strided extents (checked above). With
    // beta = 0 dgemm writes every element of C without reading it, so the
    // spare capacity is fully initialized before `set_len`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
        c.set_len(m * n);
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (ci, h, wd) = x.chw().unwrap();
        let (co, k) = (w.shape()[0], w.shape()[2]);
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; co * ho * wo];
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.data()[o];
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += w.data()[((o * ci + c) * k + ky) * k + kx]
                                        * x.data()[(c * h + iy as usize) * wd + ix as usize];
                                }
                            }
                        }
                    }
                    out[(o * ho + oy) * wo + ox] = acc;
                }
            }
        }
        Tensor::new(vec![co, ho, wo], out).unwrap()
    }

    fn ramp(shape: &[usize], phase: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|i| ((i as f64) * 0.37 + phase).sin()).collect()).unwrap()
    }

    #[test]
    fn conv_matches_direct_loops() {
        for &(stride, pad, k) in
            &[(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 3), (1, 2, 3), (3, 2, 3), (2, 2, 5), (1, 4, 3)]
        {
            let x = ramp(&[3, 9, 7], 0.1);
            let w = ramp(&[4, 3, k, k], 0.7);
            let b = ramp(&[4], 1.3);
            let mut g = Graph::frozen();
            let (xi, wi, bi) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
            let y = g.conv2d(xi, wi, Some(bi), stride, pad).unwrap();
            let expect = naive_conv(&x, &w, &b, stride, pad);
            assert_eq!(g.value(y).shape(), expect.shape());
            assert!(g.value(y).max_abs_diff(&expect) < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        for &(stride, pad, k) in &[(1, 1, 3), (2, 1, 3), (3, 2, 3), (2, 2, 5), (1, 0, 1)] {
            let (c, h, w) = (2, 9, 7);
            let ho = (h + 2 * pad - k) / stride + 1;
            let wo = (w + 2 * pad - k) / stride + 1;
            let x = ramp(&[c, h, w], 0.3);
            let col = im2col(x.data(), c, h, w, k, stride, pad, ho, wo);
            assert_eq!(col.len(), c * k * k * ho * wo);
            let dcol = ramp(&[col.len()], 1.1);
            let back = col2im(dcol.data(), c, h, w, k, stride, pad, ho, wo);
            let lhs: f64 = col.iter().zip(dcol.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(&back).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "{stride} {pad} {k}");
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut g = Graph::frozen();
        let x = g.constant(Tensor::zeros(&[2, 5, 5]));
        let w = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
        assert!(matches!(g.conv2d(x, w, None, 1, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn shared_leaf_accumulates() {
        let mut g = Graph::frozen();
        let a = g.input(Tensor::scalar(3.0));
        let sq = g.mul(a, a).unwrap();
        let s = g.add(sq, a).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap().item(), 7.0);
    }

    #[test]
    fn ln_rejects_non_positive() {
        let mut g = Graph::frozen();
        let a = g.input(Tensor::scalar(0.0));
        assert!(matches!(g.ln(a), Err(Error::Numeric(_))));
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
