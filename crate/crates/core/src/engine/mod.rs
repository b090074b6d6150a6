//! Training, checkpointing and inference.

pub mod checkpoint;
pub mod config;
pub mod infer;
pub mod optim;
pub mod trainer;

pub use checkpoint::{Checkpoint, TOOL_VERSION};
pub use config::{apply_overrides, apply_toml, TrainingConfig};
pub use infer::{derain_to_files, evaluate, evaluate_identity, rainmake, RainmakeManifest};
pub use optim::{Adam, AdamHyper};
pub use trainer::{GmmLogRow, StepLog, Trainer};
