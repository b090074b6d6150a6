//! Save a training state, reload it and confirm that deraining is bitwise
//! unchanged and that resumed training continues the same trajectory.

use derain_cyclegan::data::{write_synth_dataset, DatasetLayout, SynthDataSpec, UnpairedSet};
use derain_cyclegan::engine::{Checkpoint, Trainer, TrainingConfig};

fn main() -> derain_cyclegan::Result<()> {
    let dir = std::env::temp_dir().join("checkpoint_roundtrip");
    let root = dir.join("data");
    write_synth_dataset(&root, &SynthDataSpec { train_per_domain: 2, test_pairs: 0, ..SynthDataSpec::default() })?;
    let data = UnpairedSet::load(&DatasetLayout::new(&root))?;
    let config = TrainingConfig { epochs: 2, crop_size: 32, checkpoint_interval: 1, ..TrainingConfig::toy() };

    let mut straight = Trainer::new(config.clone(), Some(&dir.join("straight")))?;
    straight.run(&data, |_| {})?;

    let mut first = Trainer::new(config, Some(&dir.join("resumed")))?;
    first.train_epoch(&data, &mut |_| {})?;
    let path = first.last_checkpoint().expect("epoch checkpoint").to_path_buf();
    let probe = &data.rain[0].image;
    let before = first.state.bundle.derain(probe)?;

    let loaded = Checkpoint::load(&path)?;
    let after = loaded.bundle.derain(probe)?;
    println!("derain after reload bitwise equal: {}", before.0 == after.0 && before.1 == after.1);

    let mut resumed = Trainer::from_checkpoint(loaded, Some(&dir.join("resumed")))?;
    resumed.run(&data, |_| {})?;
    let tail = &straight.history[straight.history.len() - resumed.history.len()..];
    println!("resumed steps match uninterrupted run: {}", tail == &resumed.history[..]);
    for log in &resumed.history {
        println!("step {}  total {:.6}", log.step, log.total);
    }
    Ok(())
}
