//! Use the rain-adding generator to turn a folder of clean images into a
//! paired dataset, then load it back with the paired loader.
//!
//! ```text
//! cargo run --release --example rainmake -- [checkpoint] [out_dir]
//! ```
//! Without a checkpoint a briefly trained toy model is used.

use std::path::PathBuf;

use derain_cyclegan::data::{load_paired, write_synth_dataset, DatasetLayout, SynthDataSpec, UnpairedSet};
use derain_cyclegan::engine::{rainmake, Checkpoint, Trainer, TrainingConfig};

fn main() -> derain_cyclegan::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt_arg = args.next();
    let out: PathBuf = args.next().map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("rainmake"));

    let data_root = out.join("source");
    write_synth_dataset(&data_root, &SynthDataSpec { train_per_domain: 6, test_pairs: 0, ..SynthDataSpec::default() })?;
    let state = match ckpt_arg {
        Some(p) => Checkpoint::load(p.as_ref())?,
        None => {
            let mut t = Trainer::new(TrainingConfig { epochs: 1, ..TrainingConfig::toy() }, None)?;
            t.run(&UnpairedSet::load(&DatasetLayout::new(&data_root))?, |_| {})?;
            t.state
        }
    };

    let layout = DatasetLayout::new(&data_root);
    let generated = out.join("generated");
    let manifest = rainmake(&state.bundle, &state.config.hash(), &layout.norain_dir(), &generated)?;
    let pairs = load_paired(&DatasetLayout::new(&generated))?;
    for p in &pairs {
        let diff = p.rainy.data().iter().zip(p.clean.data()).map(|(a, b)| (a - b).abs()).sum::<f64>();
        println!("{}: mean |r_n - n| = {:.4}", p.name, diff / p.clean.data().len() as f64);
    }
    println!("{} pairs in {}", manifest.files.len(), generated.display());
    Ok(())
}
