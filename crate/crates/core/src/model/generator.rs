//! U-net generator: 16 convolution blocks, 8 encoder and 8 decoder, with
//! three stride-2 downsampling steps and channel-concatenation skips.
//!
//! ```text
//! enc0 enc1 ─────────────────────────────── cat ─ dec5 dec6 dec7(tanh)
//!           enc2(s2) enc3 ───────────── cat ─ dec3 ─ up dec4
//!                    enc4(s2) enc5 ── cat ─ dec1 ─ up dec2
//!                             enc6(s2) enc7 ─ up dec0
//! ```
//!
//! Inputs whose sides are not multiples of 8 are replicate-padded and the
//! output is cropped back, so any size at least 1x1 is accepted.

use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::params::{Group, ParamStore};

use super::layers::Conv2d;

pub const ENCODER_BLOCKS: usize = 8;
pub const DECODER_BLOCKS: usize = 8;
const ALIGN: usize = 8;

#[derive(Clone, Debug)]
pub struct Generator {
    pub encoder: Vec<Conv2d>,
    pub decoder: Vec<Conv2d>,
    pub image_channels: usize,
    pub width: usize,
}

impl Generator {
    pub fn new(store: &mut ParamStore, name: &str, group: Group, image_channels: usize, width: usize) -> Self {
        let b = width;
        let c = |store: &mut ParamStore, i: &str, cin, cout, stride| {
            Conv2d::new(store, &format!("{name}.{i}"), group, cin, cout, 3, stride)
        };
        let encoder = vec![
            c(store, "enc0", image_channels + 1, b, 1),
            c(store, "enc1", b, b, 1),
            c(store, "enc2", b, 2 * b, 2),
            c(store, "enc3", 2 * b, 2 * b, 1),
            c(store, "enc4", 2 * b, 4 * b, 2),
            c(store, "enc5", 4 * b, 4 * b, 1),
            c(store, "enc6", 4 * b, 8 * b, 2),
            c(store, "enc7", 8 * b, 8 * b, 1),
        ];
        let decoder = vec![
            c(store, "dec0", 8 * b, 4 * b, 1),
            c(store, "dec1", 8 * b, 4 * b, 1),
            c(store, "dec2", 4 * b, 2 * b, 1),
            c(store, "dec3", 4 * b, 2 * b, 1),
            c(store, "dec4", 2 * b, b, 1),
            c(store, "dec5", 2 * b, b, 1),
            c(store, "dec6", b, b, 1),
            c(store, "dec7", b, image_channels, 1),
        ];
        Generator { encoder, decoder, image_channels, width }
    }

    /// `G(mask, img)`: the input is `concat(img, mask)`; output in `[-1, 1]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, mask: NodeId, img: NodeId) -> Result<NodeId> {
        let (c, h, w) = g.value(img).chw()?;
        let (mc, mh, mw) = g.value(mask).chw()?;
        if (mh, mw) != (h, w) || mc != 1 {
            return Err(Error::dim(format!("mask {mc}x{mh}x{mw} not aligned with image {c}x{h}x{w}")));
        }
        if c != self.image_channels {
            return Err(Error::dim(format!("generator expects {} image channels, got {c}", self.image_channels)));
        }
        let x = g.concat_channels(&[img, mask])?;
        let (ph, pw) = (h.div_ceil(ALIGN) * ALIGN, w.div_ceil(ALIGN) * ALIGN);
        let x = if (ph, pw) != (h, w) { g.pad_replicate(x, ph, pw)? } else { x };

        let e = &self.encoder;
        let d = &self.decoder;
        let block = |g: &mut Graph, conv: &Conv2d, x: NodeId| -> Result<NodeId> {
            let y = conv.forward(g, store, x)?;
            Ok(g.relu(y))
        };
        let x = block(g, &e[0], x)?;
        let skip0 = block(g, &e[1], x)?;
        let x = block(g, &e[2], skip0)?;
        let skip1 = block(g, &e[3], x)?;
        let x = block(g, &e[4], skip1)?;
        let skip2 = block(g, &e[5], x)?;
        let x = block(g, &e[6], skip2)?;
        let bottom = block(g, &e[7], x)?;

        let mut x = bottom;
        for (level, skip) in [(0, skip2), (1, skip1), (2, skip0)] {
            let up = g.upsample2(x)?;
            let y = block(g, &d[2 * level], up)?;
            let cat = g.concat_channels(&[y, skip])?;
            x = block(g, &d[2 * level + 1], cat)?;
        }
        let x = block(g, &d[6], x)?;
        let y = d[7].forward(g, store, x)?;
        let y = g.tanh(y);
        if (ph, pw) != (h, w) {
            g.crop(y, h, w)
        } else {
            Ok(y)
        }
    }
}
