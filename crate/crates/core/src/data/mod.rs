//! Dataset directories, the unpaired sampler, and the synthetic toy set.
//!
//! A dataset root holds `rain/` and `norain/` subdirectories of PNG files.
//! Unpaired training ignores filenames; paired evaluation matches them.

pub mod rain;
pub mod scenes;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{read_png, write_png, Image};

pub use rain::{render_streaks, sample_streaks, synth_rain, RainSynthSpec, Streak};
pub use scenes::procedural_scene;

pub const RAIN_DIR: &str = "rain";
pub const NORAIN_DIR: &str = "norain";
pub const PAIRED_TEST_DIR: &str = "paired_test";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DatasetLayout { root: root.into() }
    }

    pub fn rain_dir(&self) -> PathBuf {
        self.root.join(RAIN_DIR)
    }

    pub fn norain_dir(&self) -> PathBuf {
        self.root.join(NORAIN_DIR)
    }
}

/// PNG filenames in `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.path().is_file() && name.to_ascii_lowercase().ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn non_empty(dir: &Path) -> Result<Vec<String>> {
    let names = list_images(dir)?;
    if names.is_empty() {
        return Err(Error::dataset(dir, "no PNG images found"));
    }
    Ok(names)
}

/// Decode one file; grayscale inputs are replicated to RGB.
pub fn load_image(path: &Path) -> Result<Image> {
    read_png(path).map(Image::into_rgb).map_err(|e| match e {
        Error::Decode { .. } => Error::dataset(path, e.to_string()),
        other => other,
    })
}

#[derive(Clone, Debug)]
pub struct NamedImage {
    pub name: String,
    pub image: Image,
}

pub fn load_dir(dir: &Path) -> Result<Vec<NamedImage>> {
    non_empty(dir)?.into_iter().map(|name| Ok(NamedImage { image: load_image(&dir.join(&name))?, name })).collect()
}

/// Positional pairing of two independently shuffled domains for one epoch.
/// Returns `(rain index, norain index)` pairs; the shorter domain cycles.
pub fn epoch_pairing(rain_len: usize, norain_len: usize, seed: u64, epoch: u64) -> Vec<(usize, usize)> {
    let shuffled = |len: usize, domain: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch.wrapping_mul(2).wrapping_add(domain));
        let mut idx: Vec<usize> = (0..len).collect();
        idx.shuffle(&mut rng);
        idx
    };
    let (a, b) = (shuffled(rain_len, 0), shuffled(norain_len, 1));
    let count = rain_len.max(norain_len);
    if rain_len == 0 || norain_len == 0 {
        return Vec::new();
    }
    (0..count).map(|i| (a[i % rain_len], b[i % norain_len])).collect()
}

/// Both domains held in memory, for repeated epochs.
#[derive(Clone, Debug)]
pub struct UnpairedSet {
    pub rain: Vec<NamedImage>,
    pub norain: Vec<NamedImage>,
}

impl UnpairedSet {
    pub fn load(layout: &DatasetLayout) -> Result<Self> {
        Ok(UnpairedSet { rain: load_dir(&layout.rain_dir())?, norain: load_dir(&layout.norain_dir())? })
    }

    /// Concatenate several dataset roots; names are prefixed with the root
    /// index (`0/0001.png`) so they stay unique.
    pub fn load_many(layouts: &[DatasetLayout]) -> Result<Self> {
        if let [one] = layouts {
            return Self::load(one);
        }
        let mut set = UnpairedSet { rain: Vec::new(), norain: Vec::new() };
        for (k, layout) in layouts.iter().enumerate() {
            let part = Self::load(layout)?;
            let tag =
                |v: Vec<NamedImage>| v.into_iter().map(move |x| NamedImage { name: format!("{k}/{}", x.name), ..x });
            set.rain.extend(tag(part.rain));
            set.norain.extend(tag(part.norain));
        }
        if set.rain.is_empty() {
            return Err(Error::Config("no dataset roots given".into()));
        }
        Ok(set)
    }

    pub fn pairs_per_epoch(&self) -> usize {
        self.rain.len().max(self.norain.len())
    }

    pub fn epoch(&self, seed: u64, epoch: u64) -> impl Iterator<Item = (&Image, &Image)> + '_ {
        epoch_pairing(self.rain.len(), self.norain.len(), seed, epoch)
            .into_iter()
            .map(move |(i, j)| (&self.rain[i].image, &self.norain[j].image))
    }
}

/// Lazily decoded `(rainy, rain-free)` pairs for one epoch.
pub fn unpaired_batches(
    layout: &DatasetLayout,
    seed: u64,
    epoch: u64,
) -> Result<impl Iterator<Item = Result<(Image, Image)>>> {
    let (rain_dir, norain_dir) = (layout.rain_dir(), layout.norain_dir());
    let rain = non_empty(&rain_dir)?;
    let norain = non_empty(&norain_dir)?;
    let pairs = epoch_pairing(rain.len(), norain.len(), seed, epoch);
    Ok(pairs
        .into_iter()
        .map(move |(i, j)| Ok((load_image(&rain_dir.join(&rain[i]))?, load_image(&norain_dir.join(&norain[j]))?))))
}

#[derive(Clone, Debug)]
pub struct PairedSample {
    pub name: String,
    pub rainy: Image,
    pub clean: Image,
}

/// Filename-matched pairs sorted by name. Every unmatched file is listed in
/// a single error.
pub fn load_paired(layout: &DatasetLayout) -> Result<Vec<PairedSample>> {
    let (rain_dir, norain_dir) = (layout.rain_dir(), layout.norain_dir());
    let rain: BTreeSet<String> = list_images(&rain_dir)?.into_iter().collect();
    let norain: BTreeSet<String> = list_images(&norain_dir)?.into_iter().collect();
    let mut problems = Vec::new();
    for n in rain.difference(&norain) {
        problems.push(format!("{RAIN_DIR}/{n} has no match in {NORAIN_DIR}/"));
    }
    for n in norain.difference(&rain) {
        problems.push(format!("{NORAIN_DIR}/{n} has no match in {RAIN_DIR}/"));
    }
    if !problems.is_empty() {
        return Err(Error::dataset(&layout.root, format!("unmatched files: {}", problems.join("; "))));
    }
    if rain.is_empty() {
        return Err(Error::dataset(&layout.root, "no filename-matched pairs"));
    }
    rain.into_iter()
        .map(|name| {
            let rainy = load_image(&rain_dir.join(&name))?;
            let clean = load_image(&norain_dir.join(&name))?;
            if rainy.tensor().shape() != clean.tensor().shape() {
                return Err(Error::dataset(&layout.root, format!("pair {name} differs in size")));
            }
            Ok(PairedSample { name, rainy, clean })
        })
        .collect()
}

/// Parameters of the generated toy dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthDataSpec {
    pub train_per_domain: usize,
    pub test_pairs: usize,
    pub size: usize,
    pub seed: u64,
    pub rain: RainSynthSpec,
}

impl Default for SynthDataSpec {
    fn default() -> Self {
        SynthDataSpec { train_per_domain: 20, test_pairs: 10, size: 64, seed: 0, rain: RainSynthSpec::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub tool_version: String,
    pub spec: SynthDataSpec,
    pub rain: Vec<String>,
    pub norain: Vec<String>,
    pub paired_test: Vec<String>,
}

/// Scene seeds are split in three disjoint ranges: rainy training scenes,
/// rain-free training scenes and paired test scenes.
fn scene_seed(base: u64, set: u64, i: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(set << 32).wrapping_add(i as u64)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Write `rain/`, `norain/`, `paired_test/{rain,norain}/` and a manifest.
pub fn write_synth_dataset(root: &Path, spec: &SynthDataSpec) -> Result<SynthManifest> {
    spec.rain.validate()?;
    if spec.size < crate::imaging::MIN_SIDE {
        return Err(Error::Config(format!("synthetic image size must be at least {}", crate::imaging::MIN_SIDE)));
    }
    if spec.train_per_domain == 0 {
        return Err(Error::Config("train_per_domain must be at least 1".into()));
    }
    let s = spec.size;
    let rain_spec = |set: u64, i: usize| spec.rain.with_seed(scene_seed(spec.rain.seed ^ spec.seed, set + 8, i));
    let name = |i: usize| format!("{i:04}.png");
    let layout = DatasetLayout::new(root);
    let test = DatasetLayout::new(root.join(PAIRED_TEST_DIR));
    for d in [layout.rain_dir(), layout.norain_dir(), test.rain_dir(), test.norain_dir()] {
        ensure_dir(&d)?;
    }
    let mut manifest = SynthManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        spec: spec.clone(),
        rain: Vec::new(),
        norain: Vec::new(),
        paired_test: Vec::new(),
    };
    for i in 0..spec.train_per_domain {
        let clean = procedural_scene(3, s, s, scene_seed(spec.seed, 0, i));
        let (rainy, _) = synth_rain(&clean, &rain_spec(0, i))?;
        write_png(&layout.rain_dir().join(name(i)), &rainy)?;
        manifest.rain.push(name(i));
        let other = procedural_scene(3, s, s, scene_seed(spec.seed, 1, i));
        write_png(&layout.norain_dir().join(name(i)), &other)?;
        manifest.norain.push(name(i));
    }
    for i in 0..spec.test_pairs {
        let clean = procedural_scene(3, s, s, scene_seed(spec.seed, 2, i));
        let (rainy, _) = synth_rain(&clean, &rain_spec(2, i))?;
        write_png(&test.rain_dir().join(name(i)), &rainy)?;
        write_png(&test.norain_dir().join(name(i)), &clean)?;
        manifest.paired_test.push(name(i));
    }
    let path = root.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
