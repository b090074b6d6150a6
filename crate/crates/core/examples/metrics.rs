//! PSNR and SSIM of a clean scene against progressively heavier rain,
//! in RGB and in BT.601 luma.

use derain_cyclegan::data::{procedural_scene, synth_rain, RainSynthSpec};
use derain_cyclegan::metrics::{psnr, ssim, ColorMode, PEAK_8BIT};

fn main() -> derain_cyclegan::Result<()> {
    let clean = procedural_scene(3, 64, 64, 4);
    println!("{:>8} {:>10} {:>8} {:>10} {:>8}", "density", "psnr rgb", "ssim", "psnr luma", "ssim");
    for density in [0.0, 2000.0, 6000.0, 15000.0] {
        let (rainy, _) = synth_rain(&clean, &RainSynthSpec { density, seed: 9, ..RainSynthSpec::default() })?;
        println!(
            "{density:>8} {:>10.3} {:>8.4} {:>10.3} {:>8.4}",
            psnr(&rainy, &clean, PEAK_8BIT, ColorMode::Rgb)?,
            ssim(&rainy, &clean, ColorMode::Rgb)?,
            psnr(&rainy, &clean, PEAK_8BIT, ColorMode::Luma)?,
            ssim(&rainy, &clean, ColorMode::Luma)?,
        );
    }
    Ok(())
}
