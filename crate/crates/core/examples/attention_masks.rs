//! Run U-ARSE on a rainy image and print per-stage mask statistics.
//! With freshly initialized weights the stages show how the recurrent
//! state moves the mask away from the 0.5 starting point.

use derain_cyclegan::data::{procedural_scene, synth_rain, RainSynthSpec};
use derain_cyclegan::model::{ModelBundle, ModelConfig};

fn stats(v: &[f64]) -> (f64, f64, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, min, max)
}

fn main() -> derain_cyclegan::Result<()> {
    let bundle = ModelBundle::new(ModelConfig::toy())?;
    let clean = procedural_scene(3, 48, 48, 2);
    let (rainy, streaks) = synth_rain(&clean, &RainSynthSpec { seed: 3, ..RainSynthSpec::default() })?;

    let (final_mask, stages) = bundle.uarse_forward(&rainy)?;
    for (i, m) in stages.iter().enumerate() {
        let (mean, min, max) = stats(m.data());
        println!("stage {}: mean {mean:.4}  range [{min:.4}, {max:.4}]", i + 1);
    }
    let (mean, _, _) = stats(final_mask.data());
    let streak_px: Vec<f64> =
        final_mask.data().iter().zip(streaks.data()).filter(|(_, &s)| s > 0.5).map(|(&m, _)| m).collect();
    if !streak_px.is_empty() {
        println!("final mask mean {mean:.4}, on streak pixels {:.4}", stats(&streak_px).0);
    }

    let zero = ModelBundle::zeroed(ModelConfig::toy())?;
    let (m, _) = zero.uarse_forward(&rainy)?;
    println!("zero-weight mask mean {:.6}", stats(m.data()).0);
    Ok(())
}
