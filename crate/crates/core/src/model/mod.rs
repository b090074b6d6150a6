//! Network definitions and the bundle tying them together.
//!
//! One attention extractor (U-ARSE) is shared by both translation branches:
//! `G_N` maps rainy to rain-free, `G_R` rain-free to rainy, and `D_N`, `D_R`
//! score realism in the rain-free and rainy domains.

pub mod discriminator;
pub mod generator;
pub mod layers;
pub mod uarse;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::imaging::{AttentionMask, Image};
use crate::params::{Group, ParamStore};

pub use discriminator::Discriminator;
pub use generator::Generator;
pub use layers::{CandidateActivation, Conv2d, ConvLstm, HybridBlock, LstmState};
pub use uarse::{Uarse, UarseOutput};

/// Models consume RGB images plus a one-channel mask.
pub const IMAGE_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub uarse_stages: usize,
    pub uarse_width: usize,
    pub hybrid_residual_convs: usize,
    pub hybrid_dense_layers: usize,
    pub lstm_candidate_activation: CandidateActivation,
    pub generator_width: usize,
    pub discriminator_width: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            uarse_stages: 6,
            uarse_width: 32,
            hybrid_residual_convs: 2,
            hybrid_dense_layers: 2,
            lstm_candidate_activation: CandidateActivation::Sigmoid,
            generator_width: 32,
            discriminator_width: 64,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn toy() -> Self {
        ModelConfig { uarse_width: 8, generator_width: 8, discriminator_width: 8, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("uarse_stages", self.uarse_stages),
            ("uarse_width", self.uarse_width),
            ("hybrid_dense_layers", self.hybrid_dense_layers),
            ("generator_width", self.generator_width),
            ("discriminator_width", self.discriminator_width),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub uarse: Uarse,
    pub g_n: Generator,
    pub g_r: Generator,
    pub d_n: Discriminator,
    pub d_r: Discriminator,
}

/// Graph nodes of `n_r = G_N(Att(r), r)` and `r_n = G_R(Att(n), n)`.
#[derive(Clone, Copy, Debug)]
pub struct ForwardNodes {
    pub n_r: NodeId,
    pub r_n: NodeId,
    pub att_r: NodeId,
    pub att_n: NodeId,
}

/// Graph nodes of `r̃ = G_R(Att(n_r), n_r)` and `ñ = G_N(Att(r_n), r_n)`.
#[derive(Clone, Copy, Debug)]
pub struct BackwardNodes {
    pub r_rec: NodeId,
    pub n_rec: NodeId,
    pub att_n_r: NodeId,
    pub att_r_n: NodeId,
}

#[derive(Clone, Debug)]
pub struct ForwardTranslation {
    pub n_r: Image,
    pub r_n: Image,
    pub att_r: AttentionMask,
    pub att_n: AttentionMask,
}

#[derive(Clone, Debug)]
pub struct BackwardTranslation {
    pub r_rec: Image,
    pub n_rec: Image,
    pub att_n_r: AttentionMask,
    pub att_r_n: AttentionMask,
}

impl ModelBundle {
    /// Build every network and initialize from `config.init_seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut bundle = Self::zeroed(config)?;
        bundle.store.init_gaussian(bundle.config.init_seed);
        Ok(bundle)
    }

    /// Build every network with all weights and biases at zero.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let uarse = Uarse::new(
            &mut store,
            IMAGE_CHANNELS,
            config.uarse_stages,
            config.uarse_width,
            config.hybrid_residual_convs,
            config.hybrid_dense_layers,
            config.lstm_candidate_activation,
        );
        let g_n = Generator::new(&mut store, "g_n", Group::GenN, IMAGE_CHANNELS, config.generator_width);
        let g_r = Generator::new(&mut store, "g_r", Group::GenR, IMAGE_CHANNELS, config.generator_width);
        let d_n = Discriminator::new(&mut store, "d_n", Group::DiscN, IMAGE_CHANNELS, config.discriminator_width);
        let d_r = Discriminator::new(&mut store, "d_r", Group::DiscR, IMAGE_CHANNELS, config.discriminator_width);
        Ok(ModelBundle { config, store, uarse, g_n, g_r, d_n, d_r })
    }

    pub fn param_count(&self) -> usize {
        self.store.count(None)
    }

    pub fn attention_node(&self, g: &mut Graph, img: NodeId) -> Result<UarseOutput> {
        self.uarse.forward(g, &self.store, img)
    }

    pub fn translate_forward_nodes(&self, g: &mut Graph, r: NodeId, n: NodeId) -> Result<ForwardNodes> {
        let att_r = self.uarse.forward(g, &self.store, r)?.final_mask;
        let att_n = self.uarse.forward(g, &self.store, n)?.final_mask;
        let n_r = self.g_n.forward(g, &self.store, att_r, r)?;
        let r_n = self.g_r.forward(g, &self.store, att_n, n)?;
        Ok(ForwardNodes { n_r, r_n, att_r, att_n })
    }

    pub fn translate_backward_nodes(&self, g: &mut Graph, n_r: NodeId, r_n: NodeId) -> Result<BackwardNodes> {
        let att_n_r = self.uarse.forward(g, &self.store, n_r)?.final_mask;
        let att_r_n = self.uarse.forward(g, &self.store, r_n)?.final_mask;
        let r_rec = self.g_r.forward(g, &self.store, att_n_r, n_r)?;
        let n_rec = self.g_n.forward(g, &self.store, att_r_n, r_n)?;
        Ok(BackwardNodes { r_rec, n_rec, att_n_r, att_r_n })
    }

    /// Final mask and every per-stage mask for one image.
    pub fn uarse_forward(&self, img: &Image) -> Result<(AttentionMask, Vec<AttentionMask>)> {
        let mut g = Graph::frozen();
        let x = g.constant(img.tensor().clone());
        let out = self.uarse.forward(&mut g, &self.store, x)?;
        let stages = out
            .stage_masks
            .iter()
            .map(|&m| AttentionMask::from_tensor(g.value(m).clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok((AttentionMask::from_tensor(g.value(out.final_mask).clone())?, stages))
    }

    pub fn translate_forward(&self, r: &Image, n: &Image) -> Result<ForwardTranslation> {
        let mut g = Graph::frozen();
        let (ri, ni) = (g.constant(r.tensor().clone()), g.constant(n.tensor().clone()));
        let f = self.translate_forward_nodes(&mut g, ri, ni)?;
        Ok(ForwardTranslation {
            n_r: Image::from_tensor(g.value(f.n_r).clone())?,
            r_n: Image::from_tensor(g.value(f.r_n).clone())?,
            att_r: AttentionMask::from_tensor(g.value(f.att_r).clone())?,
            att_n: AttentionMask::from_tensor(g.value(f.att_n).clone())?,
        })
    }

    pub fn translate_backward(&self, n_r: &Image, r_n: &Image) -> Result<BackwardTranslation> {
        let mut g = Graph::frozen();
        let (a, b) = (g.constant(n_r.tensor().clone()), g.constant(r_n.tensor().clone()));
        let out = self.translate_backward_nodes(&mut g, a, b)?;
        Ok(BackwardTranslation {
            r_rec: Image::from_tensor(g.value(out.r_rec).clone())?,
            n_rec: Image::from_tensor(g.value(out.n_rec).clone())?,
            att_n_r: AttentionMask::from_tensor(g.value(out.att_n_r).clone())?,
            att_r_n: AttentionMask::from_tensor(g.value(out.att_r_n).clone())?,
        })
    }

    /// `n_r = G_N(Att(r), r)`; the rain-adding branch is never evaluated.
    pub fn derain(&self, r: &Image) -> Result<(Image, AttentionMask)> {
        self.single_branch(&self.g_n, r)
    }

    /// `r_n = G_R(Att(n), n)`.
    pub fn add_rain(&self, n: &Image) -> Result<(Image, AttentionMask)> {
        self.single_branch(&self.g_r, n)
    }

    fn single_branch(&self, gen: &Generator, img: &Image) -> Result<(Image, AttentionMask)> {
        let img = img.clone().into_rgb();
        let mut g = Graph::frozen();
        let x = g.constant(img.tensor().clone());
        let att = self.uarse.forward(&mut g, &self.store, x)?.final_mask;
        let out = gen.forward(&mut g, &self.store, att, x)?;
        Ok((Image::from_tensor(g.value(out).clone())?, AttentionMask::from_tensor(g.value(att).clone())?))
    }

    /// Score maps of `D_N` (rain-free domain) or `D_R` (rainy domain).
    pub fn discriminate(&self, rainy_domain: bool, img: &Image) -> Result<Vec<crate::tensor::Tensor>> {
        let d = if rainy_domain { &self.d_r } else { &self.d_n };
        let mut g = Graph::frozen();
        let x = g.constant(img.tensor().clone());
        let scores = d.forward(&mut g, &self.store, x)?;
        Ok(scores.iter().map(|&s| g.value(s).clone()).collect())
    }
}
