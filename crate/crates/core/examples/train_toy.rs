//! Generate the toy dataset, train the toy configuration on it and score
//! the held-out pairs against the do-nothing baseline.
//!
//! ```text
//! cargo run --release --example train_toy -- [epochs] [out_dir]
//! ```

use std::path::PathBuf;

use derain_cyclegan::data::{write_synth_dataset, DatasetLayout, SynthDataSpec, UnpairedSet, PAIRED_TEST_DIR};
use derain_cyclegan::engine::{evaluate, evaluate_identity, StepLog, Trainer, TrainingConfig};
use derain_cyclegan::metrics::ColorMode;

fn main() -> derain_cyclegan::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: u64 = args.next().map(|s| s.parse().expect("epochs")).unwrap_or(2);
    let out: PathBuf = args.next().map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("train_toy"));

    let data_root = out.join("data");
    write_synth_dataset(&data_root, &SynthDataSpec::default())?;
    let data = UnpairedSet::load(&DatasetLayout::new(&data_root))?;

    let config = TrainingConfig { epochs, decay_start_epoch: epochs / 2, ..TrainingConfig::toy() };
    let mut trainer = Trainer::new(config, Some(&out.join("run")))?;
    let mut every = |log: &StepLog| {
        if log.step.is_multiple_of(10) {
            println!(
                "step {:>4}  total {:>9.4}  cc {:.4}  d {:.4}",
                log.step, log.total, log.components.cc, log.d_loss
            );
        }
    };
    trainer.run(&data, &mut every)?;

    let test = DatasetLayout::new(data_root.join(PAIRED_TEST_DIR));
    let base = evaluate_identity(&test, ColorMode::Rgb)?;
    let ours = evaluate(&trainer.state.bundle, &test, ColorMode::Rgb)?;
    println!("rainy input: {:.3} dB / {:.4}", base.mean_psnr(), base.mean_ssim());
    println!("derained:    {:.3} dB / {:.4}", ours.mean_psnr(), ours.mean_ssim());
    println!("logs and checkpoints in {}", out.join("run").display());
    Ok(())
}
