//! Additive synthetic rain: `rainy = clamp(clean + streaks)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::tensor::Tensor;

/// Streak distribution. Angles are measured from vertical, intensities are
/// residual amplitudes in the `[-1, 1]` image range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RainSynthSpec {
    /// Streaks per megapixel.
    pub density: f64,
    pub length: (f64, f64),
    pub angle_deg: (f64, f64),
    pub width: f64,
    pub intensity: (f64, f64),
    pub seed: u64,
}

impl Default for RainSynthSpec {
    fn default() -> Self {
        RainSynthSpec {
            density: 4000.0,
            length: (8.0, 24.0),
            angle_deg: (-15.0, 15.0),
            width: 1.0,
            intensity: (0.4, 0.9),
            seed: 0,
        }
    }
}

impl RainSynthSpec {
    pub fn validate(&self) -> Result<()> {
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        if !(self.density >= 0.0 && self.density.is_finite()) {
            return Err(Error::Config(format!("rain density must be >= 0, got {}", self.density)));
        }
        if !ordered(self.length) || self.length.0 < 0.0 {
            return Err(Error::Config(format!("rain length range {:?} is not ordered and >= 0", self.length)));
        }
        if !ordered(self.angle_deg) {
            return Err(Error::Config(format!("rain angle range {:?} is not ordered", self.angle_deg)));
        }
        if !ordered(self.intensity) || self.intensity.0 < 0.0 {
            return Err(Error::Config(format!("rain intensity range {:?} is not ordered and >= 0", self.intensity)));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::Config(format!("rain width must be positive, got {}", self.width)));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        RainSynthSpec { seed, ..self.clone() }
    }
}

/// One straight streak in pixel coordinates (x right, y down).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Streak {
    pub cx: f64,
    pub cy: f64,
    pub length: f64,
    pub angle_deg: f64,
    pub intensity: f64,
}

impl Streak {
    fn endpoints(&self) -> ((f64, f64), (f64, f64)) {
        let t = self.angle_deg.to_radians();
        let (dx, dy) = (0.5 * self.length * t.sin(), 0.5 * self.length * t.cos());
        ((self.cx - dx, self.cy - dy), (self.cx + dx, self.cy + dy))
    }
}

/// The streak list drawn for an `height x width` image.
pub fn sample_streaks(spec: &RainSynthSpec, height: usize, width: usize) -> Vec<Streak> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let expected = spec.density * (height * width) as f64 / 1e6;
    let mut count = expected.floor() as usize;
    if rng.gen::<f64>() < expected.fract() {
        count += 1;
    }
    let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if hi > lo { rng.gen_range(lo..hi) } else { lo };
    (0..count)
        .map(|_| Streak {
            cx: rng.gen_range(0.0..width as f64),
            cy: rng.gen_range(0.0..height as f64),
            length: uniform(&mut rng, spec.length),
            angle_deg: uniform(&mut rng, spec.angle_deg),
            intensity: uniform(&mut rng, spec.intensity),
        })
        .collect()
}

fn segment_distance(px: f64, py: f64, (a, b): ((f64, f64), (f64, f64))) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 { (((px - a.0) * vx + (py - a.1) * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (qx, qy) = (a.0 + t * vx, a.1 + t * vy);
    ((px - qx).powi(2) + (py - qy).powi(2)).sqrt()
}

/// Rasterize streaks into a one-channel residual map. Each pixel centre
/// gets `intensity · clamp(width/2 + 0.5 − distance, 0, 1)` per streak.
pub fn render_streaks(streaks: &[Streak], width_px: f64, height: usize, width: usize) -> Tensor {
    let mut out = Tensor::zeros(&[1, height, width]);
    let reach = 0.5 * width_px + 0.5;
    let data = out.data_mut();
    for s in streaks {
        let seg = s.endpoints();
        let x0 = (seg.0 .0.min(seg.1 .0) - reach).floor().max(0.0) as usize;
        let x1 = ((seg.0 .0.max(seg.1 .0) + reach).ceil().max(0.0) as usize).min(width);
        let y0 = (seg.0 .1.min(seg.1 .1) - reach).floor().max(0.0) as usize;
        let y1 = ((seg.0 .1.max(seg.1 .1) + reach).ceil().max(0.0) as usize).min(height);
        for y in y0..y1 {
            for x in x0..x1 {
                let d = segment_distance(x as f64 + 0.5, y as f64 + 0.5, seg);
                let cover = (reach - d).clamp(0.0, 1.0);
                if cover > 0.0 {
                    data[y * width + x] += s.intensity * cover;
                }
            }
        }
    }
    out
}

/// Returns the rainy image and the (non-negative, one-channel) streak map.
/// The same streak is added to every channel.
pub fn synth_rain(clean: &Image, spec: &RainSynthSpec) -> Result<(Image, Tensor)> {
    spec.validate()?;
    let (c, h, w) = (clean.channels(), clean.height(), clean.width());
    let streak = render_streaks(&sample_streaks(spec, h, w), spec.width, h, w);
    let mut rainy = clean.tensor().clone();
    for ch in 0..c {
        let plane = &mut rainy.data_mut()[ch * h * w..(ch + 1) * h * w];
        for (v, s) in plane.iter_mut().zip(streak.data()) {
            *v = (*v + s).clamp(-1.0, 1.0);
        }
    }
    Ok((Image::from_tensor(rainy)?, streak))
}
