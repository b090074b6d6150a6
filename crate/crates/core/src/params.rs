//! Named parameter storage shared by all networks of a model bundle.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which network a parameter belongs to. Optimizers and graph freezing work
/// at group granularity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    Uarse,
    GenN,
    GenR,
    DiscN,
    DiscR,
}

impl Group {
    pub const GENERATOR_SIDE: [Group; 3] = [Group::Uarse, Group::GenN, Group::GenR];
    pub const DISCRIMINATOR_SIDE: [Group; 2] = [Group::DiscN, Group::DiscR];
    pub const ALL: [Group; 5] = [Group::Uarse, Group::GenN, Group::GenR, Group::DiscN, Group::DiscR];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub group: Group,
    /// Biases are excluded from weight decay.
    pub decay: bool,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, group: Group, decay: bool, tensor: Tensor) -> ParamId {
        self.entries.push(ParamEntry { name: name.into(), group, decay, tensor });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Total scalar parameter count, optionally restricted to one group.
    pub fn count(&self, group: Option<Group>) -> usize {
        self.entries.iter().filter(|e| group.is_none_or(|g| e.group == g)).map(|e| e.tensor.len()).sum()
    }

    pub fn fill(&mut self, value: f64) {
        for e in &mut self.entries {
            e.tensor.data_mut().fill(value);
        }
    }

    pub fn fill_group(&mut self, group: Group, value: f64) {
        for e in self.entries.iter_mut().filter(|e| e.group == group) {
            e.tensor.data_mut().fill(value);
        }
    }

    /// Fan-in scaled Gaussian initialization for weights, zero biases.
    /// Each tensor draws from its own stream so adding a layer does not
    /// perturb the others.
    pub fn init_gaussian(&mut self, seed: u64) {
        for (i, e) in self.entries.iter_mut().enumerate() {
            if !e.decay {
                e.tensor.data_mut().fill(0.0);
                continue;
            }
            let fan_in: usize = e.tensor.shape()[1..].iter().product::<usize>().max(1);
            let std = (2.0 / fan_in as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let normal = Normal::new(0.0, std).expect("positive std");
            for v in e.tensor.data_mut() {
                *v = normal.sample(&mut rng);
            }
        }
    }

    /// Replace every tensor with the same-named tensor from `source`.
    pub fn load_named<'a>(&mut self, mut source: impl FnMut(&str) -> Option<&'a Tensor>) -> Result<()> {
        for e in &mut self.entries {
            let t = source(&e.name).ok_or_else(|| Error::Archive(format!("missing tensor {}", e.name)))?;
            if t.shape() != e.tensor.shape() {
                return Err(Error::Archive(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    e.name,
                    t.shape(),
                    e.tensor.shape()
                )));
            }
            e.tensor = t.clone();
        }
        Ok(())
    }
}
