//! PSNR and SSIM on 8-bit quantized images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{quantize, Image};

pub const PEAK_8BIT: f64 = 255.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorMode {
    #[default]
    Rgb,
    /// BT.601 luma `0.299 R + 0.587 G + 0.114 B` of the quantized values.
    Luma,
}

/// Quantized planes (one per channel, or a single luma plane) as `f64`.
fn planes(img: &Image, mode: ColorMode) -> Vec<Vec<f64>> {
    let (c, hw) = (img.channels(), img.height() * img.width());
    let q: Vec<f64> = img.data().iter().map(|&v| quantize(v) as f64).collect();
    let chans: Vec<Vec<f64>> = (0..c).map(|i| q[i * hw..(i + 1) * hw].to_vec()).collect();
    match (mode, c) {
        (ColorMode::Luma, 3) => {
            vec![(0..hw).map(|p| 0.299 * chans[0][p] + 0.587 * chans[1][p] + 0.114 * chans[2][p]).collect()]
        }
        _ => chans,
    }
}

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    if a.tensor().shape() != b.tensor().shape() {
        return Err(Error::dim(format!(
            "metric inputs differ in shape: {:?} vs {:?}",
            a.tensor().shape(),
            b.tensor().shape()
        )));
    }
    Ok(())
}

/// `10 log10(peak² / MSE)`, `+∞` for identical quantized images.
pub fn psnr(a: &Image, b: &Image, peak: f64, mode: ColorMode) -> Result<f64> {
    check_pair(a, b)?;
    if !(peak > 0.0) {
        return Err(Error::Parameter(format!("PSNR peak must be positive, got {peak}")));
    }
    let (pa, pb) = (planes(a, mode), planes(b, mode));
    let mut sum = 0.0;
    let mut count = 0usize;
    for (x, y) in pa.iter().zip(&pb) {
        sum += x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
        count += x.len();
    }
    let mse = sum / count as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable "valid" Gaussian filtering of an `h x w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..SSIM_WINDOW).map(|t| k[t] * x[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..SSIM_WINDOW).map(|t| k[t] * rows[(i + t) * ow + j]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let k = gaussian_window();
    let c1 = (SSIM_K1 * PEAK_8BIT).powi(2);
    let c2 = (SSIM_K2 * PEAK_8BIT).powi(2);
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, h, w, &k);
    let mu_b = filter_valid(b, h, w, &k);
    let aa = filter_valid(&prod(|x, _| x * x), h, w, &k);
    let bb = filter_valid(&prod(|_, y| y * y), h, w, &k);
    let ab = filter_valid(&prod(|x, y| x * y), h, w, &k);
    let n = mu_a.len();
    (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum::<f64>()
        / n as f64
}

/// Mean local SSIM (11x11 Gaussian window, σ = 1.5), averaged over channels.
pub fn ssim(a: &Image, b: &Image, mode: ColorMode) -> Result<f64> {
    check_pair(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::dim(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")));
    }
    let (pa, pb) = (planes(a, mode), planes(b, mode));
    Ok(pa.iter().zip(&pb).map(|(x, y)| ssim_plane(x, y, h, w)).sum::<f64>() / pa.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub filename: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub images: Vec<ImageScore>,
}

impl MetricReport {
    pub fn push(&mut self, filename: impl Into<String>, a: &Image, b: &Image, mode: ColorMode) -> Result<()> {
        let psnr_db = psnr(a, b, PEAK_8BIT, mode)?;
        let ssim = ssim(a, b, mode)?;
        self.images.push(ImageScore { filename: filename.into(), psnr_db, ssim });
        Ok(())
    }

    pub fn mean_psnr(&self) -> f64 {
        self.images.iter().map(|s| s.psnr_db).sum::<f64>() / self.images.len() as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.images.iter().map(|s| s.ssim).sum::<f64>() / self.images.len() as f64
    }

    /// `filename,psnr_db,ssim` rows followed by a `mean` summary row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("filename,psnr_db,ssim\n");
        for s in &self.images {
            out.push_str(&format!("{},{:.6},{:.6}\n", s.filename, s.psnr_db, s.ssim));
        }
        out.push_str(&format!("mean,{:.6},{:.6}\n", self.mean_psnr(), self.mean_ssim()));
        out
    }
}
