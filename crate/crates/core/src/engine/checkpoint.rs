//! Training state as a named-tensor archive.
//!
//! Tensors: every parameter under its own name, Adam moments under
//! `adam.m.<name>` / `adam.v.<name>`. Metadata: the full config, step and
//! epoch counters, per-parameter Adam step counts and the streak prior.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::losses::GmmModel;
use crate::model::ModelBundle;

use super::config::TrainingConfig;
use super::optim::Adam;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainingConfig,
    pub bundle: ModelBundle,
    pub adam: Adam,
    pub step: u64,
    pub epoch: u64,
    pub gmm: GmmModel,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    tool_version: String,
    config: TrainingConfig,
    step: u64,
    epoch: u64,
    adam_steps: Vec<u64>,
    gmm: GmmModel,
}

impl Checkpoint {
    /// Fresh state: initialized networks, zero moments, unit-variance prior.
    pub fn initial(config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let bundle = ModelBundle::new(config.model.clone())?;
        Self::from_bundle(config, bundle)
    }

    pub fn from_bundle(config: TrainingConfig, bundle: ModelBundle) -> Result<Self> {
        if bundle.config != config.model {
            return Err(Error::Config("bundle was built from a different model config".into()));
        }
        let adam = Adam::new(&bundle.store);
        let gmm = GmmModel::unit(config.gmm_components)?;
        Ok(Checkpoint { config, bundle, adam, step: 0, epoch: 0, gmm })
    }

    pub fn to_archive(&self) -> Archive {
        let meta = Meta {
            tool_version: TOOL_VERSION.to_string(),
            config: self.config.clone(),
            step: self.step,
            epoch: self.epoch,
            adam_steps: self.adam.t.clone(),
            gmm: self.gmm.clone(),
        };
        let mut a = Archive::new(self.config.hash(), serde_json::to_value(meta).expect("metadata serializes"));
        let entries = self.bundle.store.entries();
        for e in entries {
            a.push(e.name.clone(), e.tensor.clone());
        }
        for (e, m) in entries.iter().zip(&self.adam.m) {
            a.push(format!("adam.m.{}", e.name), m.clone());
        }
        for (e, v) in entries.iter().zip(&self.adam.v) {
            a.push(format!("adam.v.{}", e.name), v.clone());
        }
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let meta: Meta = serde_json::from_value(a.metadata.clone())
            .map_err(|e| Error::Archive(format!("bad checkpoint metadata: {e}")))?;
        if meta.config.hash() != a.config_hash {
            return Err(Error::Archive("checkpoint config does not match its recorded hash".into()));
        }
        let mut bundle = ModelBundle::zeroed(meta.config.model.clone())?;
        bundle.store.load_named(|name| a.get(name))?;
        let mut adam = Adam::new(&bundle.store);
        if meta.adam_steps.len() != adam.t.len() {
            return Err(Error::Archive("optimizer state does not match the parameter list".into()));
        }
        adam.t = meta.adam_steps;
        for (i, e) in bundle.store.entries().iter().enumerate() {
            for (prefix, slot) in [("adam.m.", &mut adam.m[i]), ("adam.v.", &mut adam.v[i])] {
                let name = format!("{prefix}{}", e.name);
                let t = a.get(&name).ok_or_else(|| Error::Archive(format!("missing tensor {name}")))?;
                if t.shape() != e.tensor.shape() {
                    return Err(Error::Archive(format!("tensor {name} has the wrong shape")));
                }
                *slot = t.clone();
            }
        }
        Ok(Checkpoint { config: meta.config, bundle, adam, step: meta.step, epoch: meta.epoch, gmm: meta.gmm })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        self.to_archive().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}
