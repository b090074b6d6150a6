//! Recurrent attention extractor producing rain-streak masks stage by stage.

use crate::autograd::{Graph, NodeId};
use crate::error::Result;
use crate::params::{Group, ParamStore};
use crate::tensor::Tensor;

use super::layers::{CandidateActivation, Conv2d, ConvLstm, HybridBlock};

/// Mask fed to the first stage.
pub const INITIAL_MASK: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct UarseStage {
    pub entry: Conv2d,
    pub hybrid: HybridBlock,
    pub lstm: ConvLstm,
    pub output: Conv2d,
}

/// Every stage owns its parameters; the LSTM state `(H, C)` is carried from
/// one stage to the next.
#[derive(Clone, Debug)]
pub struct Uarse {
    pub stages: Vec<UarseStage>,
    pub image_channels: usize,
    pub width: usize,
}

pub struct UarseOutput {
    pub final_mask: NodeId,
    pub stage_masks: Vec<NodeId>,
}

impl Uarse {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        image_channels: usize,
        stages: usize,
        width: usize,
        residual_convs: usize,
        dense_layers: usize,
        candidate: CandidateActivation,
    ) -> Self {
        let group = Group::Uarse;
        let stages = (0..stages)
            .map(|s| {
                let name = format!("uarse.stage{s}");
                UarseStage {
                    entry: Conv2d::new(store, &format!("{name}.entry"), group, image_channels + 1, width, 3, 1),
                    hybrid: HybridBlock::new(
                        store,
                        &format!("{name}.hybrid"),
                        group,
                        width,
                        residual_convs,
                        dense_layers,
                    ),
                    lstm: ConvLstm::new(store, &format!("{name}.lstm"), group, width, candidate),
                    output: Conv2d::new(store, &format!("{name}.out"), group, width, 1, 3, 1),
                }
            })
            .collect();
        Uarse { stages, image_channels, width }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, img: NodeId) -> Result<UarseOutput> {
        let (_, h, w) = g.value(img).chw()?;
        let mut mask = g.constant(Tensor::full(&[1, h, w], INITIAL_MASK));
        let mut state = None;
        let mut stage_masks = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let inp = g.concat_channels(&[img, mask])?;
            let e = stage.entry.forward(g, store, inp)?;
            let e = g.relu(e);
            let x = stage.hybrid.forward(g, store, e)?;
            let st = match state {
                Some(s) => s,
                None => stage.lstm.zero_state(g, h, w),
            };
            let (hidden, next) = stage.lstm.step(g, store, x, st)?;
            state = Some(next);
            let logits = stage.output.forward(g, store, hidden)?;
            mask = g.sigmoid(logits);
            stage_masks.push(mask);
        }
        Ok(UarseOutput { final_mask: mask, stage_masks })
    }
}
