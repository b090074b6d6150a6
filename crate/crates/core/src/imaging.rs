//! Images, PNG I/O and training-time augmentation.
//!
//! Pixel values live in `[-1, 1]` inside the models: an 8-bit value `p` maps
//! to `2 p / 255 - 1`. Attention masks are single-channel maps in `[0, 1]`.

use std::cell::Cell;
use std::io::Read;
use std::path::Path;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Smallest side accepted for training and discrimination (three 2x scales).
pub const MIN_SIDE: usize = 16;

/// A `[channels, height, width]` raster with finite values.
#[derive(Clone, Debug, PartialEq)]
pub struct Image(Tensor);

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_tensor(Tensor::new(vec![channels, height, width], data)?)
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let (c, h, w) = t.chw()?;
        if c != 1 && c != 3 {
            return Err(Error::dim(format!("images have 1 or 3 channels, got {c}")));
        }
        if h == 0 || w == 0 {
            return Err(Error::dim("empty image"));
        }
        if !t.all_finite() {
            return Err(Error::Numeric("image contains non-finite values".into()));
        }
        Ok(Image(t))
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Image(Tensor::full(&[channels, height, width], value))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    /// Replicate a grayscale image to three channels; RGB passes through.
    pub fn into_rgb(self) -> Image {
        if self.channels() == 3 {
            return self;
        }
        let data = self.0.data().repeat(3);
        Image(Tensor::new(vec![3, self.height(), self.width()], data).expect("replicated shape"))
    }

    pub fn clamped(&self) -> Image {
        Image(self.0.map(|v| v.clamp(-1.0, 1.0)))
    }

    pub fn hflip(&self) -> Image {
        let (c, h, w) = (self.channels(), self.height(), self.width());
        let src = self.data();
        let mut out = Vec::with_capacity(src.len());
        for row in src.chunks(w).take(c * h) {
            out.extend(row.iter().rev());
        }
        Image(Tensor::new(vec![c, h, w], out).expect("flip shape"))
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        let (c, h, w) = (self.channels(), self.height(), self.width());
        if top + height > h || left + width > w {
            return Err(Error::dim(format!("crop {height}x{width} at ({top}, {left}) exceeds {h}x{w}")));
        }
        let mut out = Vec::with_capacity(c * height * width);
        for ch in 0..c {
            for y in top..top + height {
                let row = (ch * h + y) * w;
                out.extend_from_slice(&self.data()[row + left..row + left + width]);
            }
        }
        Image::new(c, height, width, out)
    }

    pub fn check_min_side(&self) -> Result<()> {
        if self.height() < MIN_SIDE || self.width() < MIN_SIDE {
            return Err(Error::dim(format!(
                "image {}x{} is smaller than the {MIN_SIDE}x{MIN_SIDE} minimum",
                self.height(),
                self.width()
            )));
        }
        Ok(())
    }
}

/// Single-channel attention map in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask(Tensor);

impl AttentionMask {
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let (c, _, _) = t.chw()?;
        if c != 1 {
            return Err(Error::dim(format!("attention masks have one channel, got {c}")));
        }
        if t.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Numeric("attention mask outside [0, 1]".into()));
        }
        Ok(AttentionMask(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    /// The mask as a grayscale image (0 -> black, 1 -> white).
    pub fn to_image(&self) -> Image {
        Image(self.0.map(|v| 2.0 * v - 1.0))
    }
}

/// Map a model-range value to 8 bits: clamp, scale, round half up.
pub fn quantize(v: f64) -> u8 {
    let scaled = (v.clamp(-1.0, 1.0) + 1.0) * 0.5 * 255.0;
    (scaled + 0.5).floor().min(255.0) as u8
}

pub fn dequantize(p: u8) -> f64 {
    2.0 * (p as f64 / 255.0) - 1.0
}

struct CountingReader<'a> {
    inner: &'a [u8],
    pos: Rc<Cell<u64>>,
}

impl Read for CountingReader<'_> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.pos.set(self.pos.get() + n as u64);
        Ok(n)
    }
}

/// Decode an 8- or 16-bit PNG. Alpha is dropped; channel count (gray or RGB)
/// is preserved.
pub fn decode(bytes: &[u8]) -> Result<Image> {
    let pos = Rc::new(Cell::new(0));
    let fail = |pos: &Rc<Cell<u64>>, e: png::DecodingError| Error::Decode { offset: pos.get(), message: e.to_string() };
    let mut decoder = png::Decoder::new(CountingReader { inner: bytes, pos: pos.clone() });
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| fail(&pos, e))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| fail(&pos, e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let samples: usize = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(Error::Decode { offset: pos.get(), message: "unexpanded palette image".into() })
        }
    };
    let channels = if samples <= 2 { 1 } else { 3 };
    let wide = info.bit_depth == png::BitDepth::Sixteen;
    let maxval = if wide { 65535.0 } else { 255.0 };
    let bytes_per = if wide { 2 } else { 1 };
    let raw = &buf[..info.buffer_size()];
    let mut data = vec![0.0; channels * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..channels {
                let at = ((y * w + x) * samples + c) * bytes_per;
                let p = if wide { u16::from_be_bytes([raw[at], raw[at + 1]]) as f64 } else { raw[at] as f64 };
                data[(c * h + y) * w + x] = 2.0 * (p / maxval) - 1.0;
            }
        }
    }
    Image::new(channels, h, w, data)
}

/// Encode as an 8-bit PNG (gray or RGB, following the channel count).
pub fn encode(img: &Image) -> Result<Vec<u8>> {
    encode_with_text(img, &[])
}

/// [`encode`] plus `tEXt` metadata chunks.
pub fn encode_with_text(img: &Image, text: &[(&str, &str)]) -> Result<Vec<u8>> {
    if !img.tensor().all_finite() {
        return Err(Error::Encode("image contains non-finite values".into()));
    }
    let (c, h, w) = (img.channels(), img.height(), img.width());
    let mut pixels = vec![0u8; c * h * w];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                pixels[(y * w + x) * c + ch] = quantize(img.data()[(ch * h + y) * w + x]);
            }
        }
    }
    let color = if c == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb };
    encode_raw(&pixels, w as u32, h as u32, color, text)
}

pub(crate) fn encode_raw(
    pixels: &[u8],
    w: u32,
    h: u32,
    color: png::ColorType,
    text: &[(&str, &str)],
) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w, h);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        for (k, v) in text {
            enc.add_text_chunk(k.to_string(), v.to_string()).map_err(|e| Error::Encode(e.to_string()))?;
        }
        let mut writer = enc.write_header().map_err(|e| Error::Encode(e.to_string()))?;
        writer.write_image_data(pixels).map_err(|e| Error::Encode(e.to_string()))?;
    }
    Ok(out)
}

pub fn read_png(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    std::fs::write(path, encode(img)?).map_err(|e| Error::io(path, e))
}

/// Random square crop plus optional horizontal flip.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentSpec {
    pub crop: usize,
    pub flip_probability: f64,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec { crop: 216, flip_probability: 0.5, seed: 0 }
    }
}

/// Crop origin and flip are drawn from `spec.seed` alone, so equal inputs
/// give equal outputs.
pub fn augment(img: &Image, spec: &AugmentSpec) -> Result<Image> {
    if spec.crop == 0 || spec.crop > img.height() || spec.crop > img.width() {
        return Err(Error::dim(format!("crop {} does not fit in {}x{}", spec.crop, img.height(), img.width())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let top = rng.gen_range(0..=img.height() - spec.crop);
    let left = rng.gen_range(0..=img.width() - spec.crop);
    let flip = rng.gen_bool(spec.flip_probability.clamp(0.0, 1.0));
    let cropped = img.crop(top, left, spec.crop, spec.crop)?;
    Ok(if flip { cropped.hflip() } else { cropped })
}
