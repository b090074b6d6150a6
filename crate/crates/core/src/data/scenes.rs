//! Procedural clean images: a colour gradient, a few flat shapes and a
//! low-amplitude sine texture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::Image;

/// Scene values stay in `[-0.9, 0.5]`, leaving headroom for bright streaks.
const LOW: f64 = -0.9;
const HIGH: f64 = 0.5;

enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Disc { cx: f64, cy: f64, r: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Disc { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) < r * r,
        }
    }
}

pub fn procedural_scene(channels: usize, height: usize, width: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let colour = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..channels).map(|_| rng.gen_range(LOW..HIGH)).collect() };
    let start = colour(&mut rng);
    let end = colour(&mut rng);
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (gx, gy) = (theta.cos(), theta.sin());

    let (w, h) = (width as f64, height as f64);
    let shapes: Vec<(Shape, Vec<f64>)> = (0..rng.gen_range(2..6))
        .map(|_| {
            let shape = if rng.gen_bool(0.5) {
                let (x0, y0) = (rng.gen_range(0.0..w), rng.gen_range(0.0..h));
                let (sw, sh) = (rng.gen_range(0.1..0.5) * w, rng.gen_range(0.1..0.5) * h);
                Shape::Rect { x0, y0, x1: x0 + sw, y1: y0 + sh }
            } else {
                let r = rng.gen_range(0.05..0.25) * w.min(h);
                Shape::Disc { cx: rng.gen_range(0.0..w), cy: rng.gen_range(0.0..h), r }
            };
            (shape, colour(&mut rng))
        })
        .collect();
    let freq = (rng.gen_range(0.05..0.4), rng.gen_range(0.05..0.4));
    let amp = rng.gen_range(0.0..0.1);

    let mut data = vec![0.0; channels * height * width];
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = (((fx / w - 0.5) * gx + (fy / h - 0.5) * gy) + 0.5).clamp(0.0, 1.0);
            let texture = amp * (freq.0 * fx + freq.1 * fy).sin();
            let fill = shapes.iter().rev().find(|(s, _)| s.contains(fx, fy)).map(|(_, c)| c);
            for c in 0..channels {
                let base = match fill {
                    Some(col) => col[c],
                    None => start[c] + t * (end[c] - start[c]),
                };
                data[c * height * width + y * width + x] = (base + texture).clamp(LOW, HIGH);
            }
        }
    }
    Image::new(channels, height, width, data).expect("scene dimensions are consistent")
}
