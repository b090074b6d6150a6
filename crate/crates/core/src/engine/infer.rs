//! Inference-time operations: deraining, rainmaking and paired evaluation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{list_images, load_image, load_paired, DatasetLayout, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::imaging::{encode_with_text, Image};
use crate::metrics::{ColorMode, MetricReport};
use crate::model::ModelBundle;

/// Write `<stem>_derained.png` and `<stem>_mask.png` into `out_dir`, each
/// carrying `text` as PNG text chunks. Returns the two paths.
pub fn derain_to_files(
    bundle: &ModelBundle,
    input: &Path,
    out_dir: &Path,
    text: &[(&str, &str)],
) -> Result<(PathBuf, PathBuf)> {
    let img = load_image(input)?;
    let (derained, mask) = bundle.derain(&img)?;
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| Error::dataset(input, "input has no file name"))?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let out = out_dir.join(format!("{stem}{DERAINED_SUFFIX}"));
    let mask_path = out_dir.join(format!("{stem}{MASK_SUFFIX}"));
    write_with_text(&out, &derained, text)?;
    write_with_text(&mask_path, &mask.to_image(), text)?;
    Ok((out, mask_path))
}

fn write_with_text(path: &Path, img: &Image, text: &[(&str, &str)]) -> Result<()> {
    std::fs::write(path, encode_with_text(img, text)?).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RainmakeManifest {
    pub tool_version: String,
    pub checkpoint_config_hash: String,
    pub source_dir: String,
    pub files: Vec<String>,
}

/// For every clean PNG `n` in `clean_dir`, write `r_n = G_R(Att(n), n)` to
/// `out_dir/rain/` and copy `n` byte-for-byte to `out_dir/norain/`.
pub fn rainmake(bundle: &ModelBundle, config_hash: &str, clean_dir: &Path, out_dir: &Path) -> Result<RainmakeManifest> {
    let names = list_images(clean_dir)?;
    if names.is_empty() {
        return Err(Error::dataset(clean_dir, "no PNG images found"));
    }
    let layout = DatasetLayout::new(out_dir);
    for d in [layout.rain_dir(), layout.norain_dir()] {
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    for name in &names {
        let src = clean_dir.join(name);
        let (rainy, _) = bundle.add_rain(&load_image(&src)?)?;
        crate::imaging::write_png(&layout.rain_dir().join(name), &rainy)?;
        let dst = layout.norain_dir().join(name);
        std::fs::copy(&src, &dst).map_err(|e| Error::io(&dst, e))?;
    }
    let manifest = RainmakeManifest {
        tool_version: super::checkpoint::TOOL_VERSION.to_string(),
        checkpoint_config_hash: config_hash.to_string(),
        source_dir: clean_dir.display().to_string(),
        files: names,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// PSNR/SSIM of derained rainy images against their clean counterparts.
pub fn evaluate(bundle: &ModelBundle, layout: &DatasetLayout, mode: ColorMode) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    for s in load_paired(layout)? {
        let (derained, _) = bundle.derain(&s.rainy)?;
        report.push(s.name, &derained, &s.clean, mode)?;
    }
    Ok(report)
}

/// PSNR/SSIM of the untouched rainy inputs, the no-op baseline.
pub fn evaluate_identity(layout: &DatasetLayout, mode: ColorMode) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    for s in load_paired(layout)? {
        report.push(s.name, &s.rainy, &s.clean, mode)?;
    }
    Ok(report)
}

pub const DERAINED_SUFFIX: &str = "_derained.png";
pub const MASK_SUFFIX: &str = "_mask.png";
