//! Run a few steps under each loss-subset preset and show which terms are
//! active and how the logged total decomposes.

use derain_cyclegan::data::{write_synth_dataset, DatasetLayout, SynthDataSpec, UnpairedSet};
use derain_cyclegan::engine::{Trainer, TrainingConfig};
use derain_cyclegan::losses::{total_loss, LossTerm, ABLATION_PRESETS};

fn main() -> derain_cyclegan::Result<()> {
    let root = std::env::temp_dir().join("ablation_data");
    write_synth_dataset(&root, &SynthDataSpec { train_per_domain: 3, test_pairs: 0, ..SynthDataSpec::default() })?;
    let data = UnpairedSet::load(&DatasetLayout::new(&root))?;

    for preset in ABLATION_PRESETS {
        let mut config = TrainingConfig { epochs: 1, crop_size: 32, ..TrainingConfig::toy() };
        config.losses = config.losses.with_preset(preset)?;
        let mut trainer = Trainer::new(config.clone(), None)?;
        trainer.run(&data, |_| {})?;
        let last = trainer.history.last().expect("at least one step");
        let terms: Vec<String> = LossTerm::ALL
            .iter()
            .filter(|t| config.losses.is_active(**t))
            .map(|t| format!("{}={:.4}", t.name(), last.components.get(*t)))
            .collect();
        let recomputed = total_loss(&last.components, &config.losses)?;
        println!("{preset:<14} total {:>9.4} (recomputed {recomputed:>9.4})  {}", last.total, terms.join(" "));
    }
    Ok(())
}
