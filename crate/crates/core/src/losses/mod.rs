//! Objective terms.
//!
//! Every term has a graph form (`*_node`) used by the trainer and a plain
//! value form for inspection and tests.

pub mod gmm;
pub mod perceptual;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::imaging::{AttentionMask, Image};
use crate::tensor::Tensor;

pub use gmm::{gmm_em_fit, gmm_nll, gmm_nll_node, EmFit, GmmModel};
pub use perceptual::FeatureExtractor;

/// Discriminator scores are clamped to `[SCORE_EPS, 1 - SCORE_EPS]`.
pub const SCORE_EPS: f64 = 1e-7;

/// Masks live in `[0, 1]`, residuals in `[-2, 2]`; the mask is multiplied by
/// this factor before it is added to a derained image.
pub const MASK_RESIDUAL_SCALE: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossTerm {
    Adv,
    Att,
    Cc,
    P,
    Gmm,
    R,
    Id,
}

impl LossTerm {
    pub const ALL: [LossTerm; 7] =
        [LossTerm::Adv, LossTerm::Att, LossTerm::Cc, LossTerm::P, LossTerm::Gmm, LossTerm::R, LossTerm::Id];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Adv => "adv",
            LossTerm::Att => "att",
            LossTerm::Cc => "cc",
            LossTerm::P => "p",
            LossTerm::Gmm => "gmm",
            LossTerm::R => "r",
            LossTerm::Id => "id",
        }
    }
}

impl FromStr for LossTerm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossTerm::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss term {s:?}")))
    }
}

/// Named ablation subsets: `base` is adversarial + cycle consistency,
/// `total` the full six-term objective, and `base+p+gmm` style strings
/// add terms one by one.
pub const ABLATION_PRESETS: [&str; 5] = ["base", "base+p", "base+p+gmm", "base+p+gmm+r", "total"];

pub fn parse_term_set(spec: &str) -> Result<BTreeSet<LossTerm>> {
    let mut parts = spec.split('+').map(str::trim);
    let mut set: BTreeSet<LossTerm> = match parts.next() {
        Some("base") => [LossTerm::Adv, LossTerm::Cc].into(),
        Some("total") => LossWeights::default().enabled,
        Some(other) => return Err(Error::Config(format!("loss preset must start with base or total, got {other:?}"))),
        None => unreachable!("split yields at least one part"),
    };
    for p in parts {
        set.insert(p.parse()?);
    }
    Ok(set)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_att: f64,
    pub lambda_cc: f64,
    pub lambda_p: f64,
    pub lambda_gmm: f64,
    pub lambda_r: f64,
    /// Optional identity term, disabled unless listed in `enabled`.
    pub lambda_id: f64,
    pub enabled: BTreeSet<LossTerm>,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_adv: 1.0,
            lambda_att: 10.0,
            lambda_cc: 10.0,
            lambda_p: 0.01,
            lambda_gmm: 10.0,
            lambda_r: 10.0,
            lambda_id: 0.1,
            enabled: [LossTerm::Adv, LossTerm::Att, LossTerm::Cc, LossTerm::P, LossTerm::Gmm, LossTerm::R].into(),
        }
    }
}

impl LossWeights {
    pub fn weight(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::Adv => self.lambda_adv,
            LossTerm::Att => self.lambda_att,
            LossTerm::Cc => self.lambda_cc,
            LossTerm::P => self.lambda_p,
            LossTerm::Gmm => self.lambda_gmm,
            LossTerm::R => self.lambda_r,
            LossTerm::Id => self.lambda_id,
        }
    }

    pub fn set_weight(&mut self, term: LossTerm, value: f64) {
        match term {
            LossTerm::Adv => self.lambda_adv = value,
            LossTerm::Att => self.lambda_att = value,
            LossTerm::Cc => self.lambda_cc = value,
            LossTerm::P => self.lambda_p = value,
            LossTerm::Gmm => self.lambda_gmm = value,
            LossTerm::R => self.lambda_r = value,
            LossTerm::Id => self.lambda_id = value,
        }
    }

    pub fn is_enabled(&self, term: LossTerm) -> bool {
        self.enabled.contains(&term)
    }

    /// Enabled with a non-zero weight, i.e. worth computing.
    pub fn is_active(&self, term: LossTerm) -> bool {
        self.is_enabled(term) && self.weight(term) != 0.0
    }

    pub fn with_preset(mut self, spec: &str) -> Result<Self> {
        self.enabled = parse_term_set(spec)?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for t in LossTerm::ALL {
            let w = self.weight(t);
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Config(format!("loss weight lambda_{} must be finite and >= 0, got {w}", t.name())));
            }
        }
        Ok(())
    }
}

/// Raw (unweighted) value of every term; disabled terms are 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub adv: f64,
    pub att: f64,
    pub cc: f64,
    pub p: f64,
    pub gmm: f64,
    pub r: f64,
    pub id: f64,
}

impl LossComponents {
    pub fn get(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::Adv => self.adv,
            LossTerm::Att => self.att,
            LossTerm::Cc => self.cc,
            LossTerm::P => self.p,
            LossTerm::Gmm => self.gmm,
            LossTerm::R => self.r,
            LossTerm::Id => self.id,
        }
    }

    pub fn set(&mut self, term: LossTerm, v: f64) {
        match term {
            LossTerm::Adv => self.adv = v,
            LossTerm::Att => self.att = v,
            LossTerm::Cc => self.cc = v,
            LossTerm::P => self.p = v,
            LossTerm::Gmm => self.gmm = v,
            LossTerm::R => self.r = v,
            LossTerm::Id => self.id = v,
        }
    }
}

/// `Σ λ_t · L_t` over enabled terms.
pub fn total_loss(components: &LossComponents, weights: &LossWeights) -> Result<f64> {
    weights.validate()?;
    Ok(LossTerm::ALL.iter().filter(|t| weights.is_enabled(**t)).map(|&t| weights.weight(t) * components.get(t)).sum())
}

impl fmt::Display for LossComponents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "adv {:.4} att {:.4} cc {:.4} p {:.4} gmm {:.4} r {:.4} id {:.4}",
            self.adv, self.att, self.cc, self.p, self.gmm, self.r, self.id
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorMode {
    /// Fresh truncated-Gaussian target per call.
    Sampled,
    /// Constant target at the prior mean.
    Constant,
}

/// Target distribution for masks of rainy images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionPrior {
    pub mode: PriorMode,
    pub mean: f64,
    pub std: f64,
}

impl Default for AttentionPrior {
    fn default() -> Self {
        AttentionPrior { mode: PriorMode::Sampled, mean: 0.5, std: 0.15 }
    }
}

impl AttentionPrior {
    /// Target map with values in `[0, 1]` (rejection-sampled truncation).
    pub fn sample_target<R: Rng>(&self, shape: &[usize], rng: &mut R) -> Tensor {
        match self.mode {
            PriorMode::Constant => Tensor::full(shape, self.mean.clamp(0.0, 1.0)),
            PriorMode::Sampled => {
                let normal = Normal::new(self.mean, self.std.max(1e-12)).expect("finite prior");
                let mut t = Tensor::zeros(shape);
                for v in t.data_mut() {
                    *v = loop {
                        let s = normal.sample(rng);
                        if (0.0..=1.0).contains(&s) {
                            break s;
                        }
                    };
                }
                t
            }
        }
    }
}

/// `mean((mask_r − target)²) + mean(mask_n²)`.
pub fn attention_loss_node(g: &mut Graph, mask_r: NodeId, mask_n: NodeId, target: &Tensor) -> Result<NodeId> {
    let t = g.constant(target.clone());
    let d = g.sub(mask_r, t)?;
    let sq = g.square(d);
    let lr = g.mean(sq);
    let sq_n = g.square(mask_n);
    let ln = g.mean(sq_n);
    g.add(lr, ln)
}

/// Returns `(L_att_r, L_att_n)` for an explicit rainy-mask target.
pub fn attention_loss_parts(mask_r: &AttentionMask, mask_n: &AttentionMask, target: &Tensor) -> Result<(f64, f64)> {
    mask_r.tensor().expect_same_shape(target)?;
    let lr = mask_r.tensor().zip_map(target, |a, b| (a - b).powi(2))?.mean();
    let ln = mask_n.tensor().map(|a| a * a).mean();
    Ok((lr, ln))
}

pub fn attention_loss<R: Rng>(
    mask_r: &AttentionMask,
    mask_n: &AttentionMask,
    prior: &AttentionPrior,
    rng: &mut R,
) -> Result<f64> {
    let target = prior.sample_target(mask_r.tensor().shape(), rng);
    let (a, b) = attention_loss_parts(mask_r, mask_n, &target)?;
    Ok(a + b)
}

fn clamped_log(g: &mut Graph, x: NodeId, complement: bool) -> Result<NodeId> {
    let c = g.clamp(x, SCORE_EPS, 1.0 - SCORE_EPS);
    let c = if complement {
        let neg = g.scale(c, -1.0);
        g.add_scalar(neg, 1.0)
    } else {
        c
    };
    g.ln(c)
}

fn check_scores(g: &Graph, scores: &[NodeId]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::dim("no discriminator scales"));
    }
    if scores.iter().any(|&s| !g.value(s).all_finite()) {
        return Err(Error::Numeric("non-finite discriminator score".into()));
    }
    Ok(())
}

/// `mean_s[ −mean log D(real) − mean log(1 − D(fake)) ]` over scales.
pub fn discriminator_loss_node(g: &mut Graph, real: &[NodeId], fake: &[NodeId]) -> Result<NodeId> {
    check_scores(g, real)?;
    check_scores(g, fake)?;
    if real.len() != fake.len() {
        return Err(Error::dim("real and fake score lists differ in scale count"));
    }
    let mut terms = Vec::with_capacity(2 * real.len());
    let w = -1.0 / real.len() as f64;
    for (&r, &f) in real.iter().zip(fake) {
        let lr = clamped_log(g, r, false)?;
        let lr = g.mean(lr);
        let lf = clamped_log(g, f, true)?;
        let lf = g.mean(lf);
        terms.push((lr, w));
        terms.push((lf, w));
    }
    g.combine(&terms)
}

/// Non-saturating generator term `mean_s[ −mean log D(fake) ]`.
pub fn generator_adv_loss_node(g: &mut Graph, fake: &[NodeId]) -> Result<NodeId> {
    check_scores(g, fake)?;
    let w = -1.0 / fake.len() as f64;
    let mut terms = Vec::with_capacity(fake.len());
    for &f in fake {
        let l = clamped_log(g, f, false)?;
        terms.push((g.mean(l), w));
    }
    g.combine(&terms)
}

/// `(d_loss, g_loss)` for one discriminator given per-scale score maps.
pub fn adversarial_losses(real: &[Tensor], fake: &[Tensor]) -> Result<(f64, f64)> {
    let mut g = Graph::frozen();
    let r: Vec<NodeId> = real.iter().map(|t| g.constant(t.clone())).collect();
    let f: Vec<NodeId> = fake.iter().map(|t| g.constant(t.clone())).collect();
    let d = discriminator_loss_node(&mut g, &r, &f)?;
    let gl = generator_adv_loss_node(&mut g, &f)?;
    Ok((g.value(d).item(), g.value(gl).item()))
}

/// `mean|r − r̃| + mean|n − ñ|`.
pub fn cycle_loss_node(g: &mut Graph, r: NodeId, r_rec: NodeId, n: NodeId, n_rec: NodeId) -> Result<NodeId> {
    let a = l1_node(g, r, r_rec)?;
    let b = l1_node(g, n, n_rec)?;
    g.add(a, b)
}

pub fn l1_node(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    let d = g.sub(a, b)?;
    let d = g.abs(d);
    Ok(g.mean(d))
}

pub fn cycle_loss(r: &Image, r_rec: &Image, n: &Image, n_rec: &Image) -> Result<f64> {
    let mut g = Graph::frozen();
    let ids: Vec<NodeId> = [r, r_rec, n, n_rec].iter().map(|i| g.constant(i.tensor().clone())).collect();
    let out = cycle_loss_node(&mut g, ids[0], ids[1], ids[2], ids[3])?;
    Ok(g.value(out).item())
}

/// `mean((φ(n_r) − φ(r))²)`.
pub fn perceptual_loss_node(g: &mut Graph, extractor: &FeatureExtractor, n_r: NodeId, r: NodeId) -> Result<NodeId> {
    let fa = extractor.features(g, n_r)?;
    let fb = extractor.features(g, r)?;
    let d = g.sub(fa, fb)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

pub fn perceptual_loss(n_r: &Image, r: &Image, extractor: &FeatureExtractor) -> Result<f64> {
    let mut g = Graph::frozen();
    let a = g.constant(n_r.tensor().clone());
    let b = g.constant(r.tensor().clone());
    let out = perceptual_loss_node(&mut g, extractor, a, b)?;
    Ok(g.value(out).item())
}

/// `mean((s · Att(r) + n_r − r)²)` with the mask broadcast over channels.
pub fn reconstructive_loss_node(g: &mut Graph, mask_r: NodeId, n_r: NodeId, r: NodeId) -> Result<NodeId> {
    let (c, h, w) = g.value(r).chw()?;
    let (mc, mh, mw) = g.value(mask_r).chw()?;
    if (mc, mh, mw) != (1, h, w) {
        return Err(Error::dim(format!("mask {mc}x{mh}x{mw} not aligned with {c}x{h}x{w}")));
    }
    let m = g.broadcast_channels(mask_r, c)?;
    let m = g.scale(m, MASK_RESIDUAL_SCALE);
    let composite = g.add(m, n_r)?;
    let d = g.sub(composite, r)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

pub fn reconstructive_loss(mask_r: &AttentionMask, n_r: &Image, r: &Image) -> Result<f64> {
    let mut g = Graph::frozen();
    let m = g.constant(mask_r.tensor().clone());
    let a = g.constant(n_r.tensor().clone());
    let b = g.constant(r.tensor().clone());
    let out = reconstructive_loss_node(&mut g, m, a, b)?;
    Ok(g.value(out).item())
}
