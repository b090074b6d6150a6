//! Fixed convolutional feature extractor for the perceptual loss.
//!
//! The default is a 4-layer ReLU network initialized from a fixed seed, so
//! no download is needed. [`FeatureExtractor::from_archive`] loads any
//! sequential conv stack instead (for example the first blocks of a
//! pretrained VGG-16) from a named-tensor archive with tensors
//! `conv{i}.weight` / `conv{i}.bias` and optional metadata
//! `pool_after: [layer indices]`, `input_mean: [3]`, `input_std: [3]`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::archive::Archive;
use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EXTRACTOR_SEED: u64 = 0x5eed_fea7;

#[derive(Clone, Debug)]
struct Layer {
    weight: Tensor,
    bias: Tensor,
    pool_after: bool,
}

#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    layers: Vec<Layer>,
    /// Per-channel affine applied to `[0, 1]` inputs: `(x - mean) / std`.
    normalize: Option<(Vec<f64>, Vec<f64>)>,
}

impl FeatureExtractor {
    /// conv(3→16) relu, conv(16→16) relu, pool, conv(16→32) relu, conv(32→32) relu.
    pub fn fixed(seed: u64) -> Self {
        let spec = [(3, 16, false), (16, 16, true), (16, 32, false), (32, 32, false)];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .iter()
            .map(|&(cin, cout, pool_after)| {
                let normal = Normal::new(0.0, (2.0 / (cin * 9) as f64).sqrt()).expect("positive std");
                let data = (0..cout * cin * 9).map(|_| normal.sample(&mut rng)).collect();
                Layer {
                    weight: Tensor::new(vec![cout, cin, 3, 3], data).expect("weight shape"),
                    bias: Tensor::zeros(&[cout]),
                    pool_after,
                }
            })
            .collect();
        FeatureExtractor { layers, normalize: None }
    }

    pub fn from_archive(path: &Path) -> Result<Self> {
        let archive = Archive::load(path)?;
        let pool_after: Vec<usize> = archive
            .metadata
            .get("pool_after")
            .map(|v| serde_json::from_value(v.clone()).map_err(|e| Error::Archive(e.to_string())))
            .transpose()?
            .unwrap_or_default();
        let mut layers = Vec::new();
        while let Some(weight) = archive.get(&format!("conv{}.weight", layers.len())) {
            let i = layers.len();
            let bias =
                archive.get(&format!("conv{i}.bias")).cloned().unwrap_or_else(|| Tensor::zeros(&[weight.shape()[0]]));
            layers.push(Layer { weight: weight.clone(), bias, pool_after: pool_after.contains(&i) });
        }
        if layers.is_empty() {
            return Err(Error::Archive("extractor archive holds no conv0.weight".into()));
        }
        let stat = |key: &str| -> Result<Option<Vec<f64>>> {
            archive
                .metadata
                .get(key)
                .map(|v| serde_json::from_value(v.clone()).map_err(|e| Error::Archive(e.to_string())))
                .transpose()
        };
        let normalize = match (stat("input_mean")?, stat("input_std")?) {
            (Some(m), Some(s)) => Some((m, s)),
            _ => None,
        };
        Ok(FeatureExtractor { layers, normalize })
    }

    pub fn input_channels(&self) -> usize {
        self.layers[0].weight.shape()[1]
    }

    /// Feature map `φ(x)` for an image node in `[-1, 1]`.
    pub fn features(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let (c, _, _) = g.value(x).chw()?;
        if c != self.input_channels() {
            return Err(Error::dim(format!("extractor expects {} channels, got {c}", self.input_channels())));
        }
        let mut y = x;
        if let Some((mean, std)) = &self.normalize {
            let mut parts = Vec::with_capacity(c);
            for ch in 0..c {
                let s = g.slice_channels(y, ch, 1)?;
                let unit = g.add_scalar(s, 1.0);
                let unit = g.scale(unit, 0.5 / std[ch]);
                parts.push(g.add_scalar(unit, -mean[ch] / std[ch]));
            }
            y = g.concat_channels(&parts)?;
        }
        for layer in &self.layers {
            let w = g.constant(layer.weight.clone());
            let b = g.constant(layer.bias.clone());
            let k = layer.weight.shape()[2];
            y = g.conv2d(y, w, Some(b), 1, k / 2)?;
            y = g.relu(y);
            if layer.pool_after {
                y = g.avg_pool2(y)?;
            }
        }
        Ok(y)
    }
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::fixed(DEFAULT_EXTRACTOR_SEED)
    }
}
