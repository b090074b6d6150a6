//! Render synthetic streaks over a procedural scene and report how much of
//! the image they cover.
//!
//! ```text
//! cargo run --example synth_rain -- [out_dir]
//! ```

use derain_cyclegan::data::{procedural_scene, sample_streaks, synth_rain, RainSynthSpec};
use derain_cyclegan::imaging::write_png;

fn main() -> derain_cyclegan::Result<()> {
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("synth_rain"));
    std::fs::create_dir_all(&out).expect("create output dir");

    let clean = procedural_scene(3, 128, 128, 11);
    for (i, density) in [1000.0, 4000.0, 12000.0].into_iter().enumerate() {
        let spec = RainSynthSpec { density, seed: 5, ..RainSynthSpec::default() };
        let streaks = sample_streaks(&spec, 128, 128);
        let (rainy, layer) = synth_rain(&clean, &spec)?;
        let covered = layer.data().iter().filter(|&&v| v > 0.05).count() as f64 / layer.len() as f64;
        println!("density {density:>6}/MP: {:>3} streaks, {:5.1}% of pixels covered", streaks.len(), 100.0 * covered);
        write_png(&out.join(format!("rainy_{i}.png")), &rainy)?;
    }
    write_png(&out.join("clean.png"), &clean)?;
    println!("images in {}", out.display());
    Ok(())
}
