//! Multi-scale discriminator: the image and two successive 2x average-pooled
//! copies each pass through three convolutions and a sigmoid head.

use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::imaging::MIN_SIDE;
use crate::params::{Group, ParamStore};

use super::layers::Conv2d;

pub const SCALES: usize = 3;
const LEAK: f64 = 0.2;

#[derive(Clone, Debug)]
pub struct DiscriminatorScale {
    pub convs: [Conv2d; 3],
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub scales: Vec<DiscriminatorScale>,
    pub image_channels: usize,
}

impl Discriminator {
    pub fn new(store: &mut ParamStore, name: &str, group: Group, image_channels: usize, width: usize) -> Self {
        let scales = (0..SCALES)
            .map(|s| {
                let n = |i: usize| format!("{name}.scale{s}.conv{i}");
                DiscriminatorScale {
                    convs: [
                        Conv2d::new(store, &n(0), group, image_channels, width, 3, 2),
                        Conv2d::new(store, &n(1), group, width, 2 * width, 3, 2),
                        Conv2d::new(store, &n(2), group, 2 * width, 1, 3, 1),
                    ],
                }
            })
            .collect();
        Discriminator { scales, image_channels }
    }

    /// One score map per scale, every value in `(0, 1)`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, img: NodeId) -> Result<Vec<NodeId>> {
        let (_, h, w) = g.value(img).chw()?;
        if h < MIN_SIDE || w < MIN_SIDE {
            return Err(Error::dim(format!(
                "discriminator needs at least {MIN_SIDE}x{MIN_SIDE} for {SCALES} scales, got {h}x{w}"
            )));
        }
        let mut scores = Vec::with_capacity(SCALES);
        let mut x = img;
        for (s, scale) in self.scales.iter().enumerate() {
            if s > 0 {
                x = g.avg_pool2(x)?;
            }
            let mut y = x;
            for (i, conv) in scale.convs.iter().enumerate() {
                y = conv.forward(g, store, y)?;
                if i < 2 {
                    y = g.leaky_relu(y, LEAK);
                }
            }
            scores.push(g.sigmoid(y));
        }
        Ok(scores)
    }
}
