//! Three-channel images with values in `[-1, 1]`, stored channel-major.

use autodiff::{Scalar, Tensor};

use crate::error::{Error, Result};

/// Pixel value of empty background.
pub const BACKGROUND: f32 = -1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    /// `data` is `3 x height x width`, channel-major.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("image dimensions must be positive, got {width}x{height}")));
        }
        if data.len() != Self::CHANNELS * width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} image needs {} values, got {}",
                Self::CHANNELS * width * height,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::invalid(format!("pixel value {v} outside [-1, 1]")));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; Self::CHANNELS * width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Translates content by `(dx, dy)` pixels: `out[y][x] = in[y - dy][x - dx]`,
    /// with `fill` where the source falls outside the frame.
    pub fn shifted(&self, dx: i32, dy: i32, fill: f32) -> Image {
        let (w, h) = (self.width as i64, self.height as i64);
        let mut out = vec![fill; self.data.len()];
        for c in 0..Self::CHANNELS {
            for y in 0..h {
                let sy = y - dy as i64;
                if !(0..h).contains(&sy) {
                    continue;
                }
                for x in 0..w {
                    let sx = x - dx as i64;
                    if (0..w).contains(&sx) {
                        out[((c as i64 * h + y) * w + x) as usize] = self.data[((c as i64 * h + sy) * w + sx) as usize];
                    }
                }
            }
        }
        Image { width: self.width, height: self.height, data: out }
    }

    pub fn flipped_horizontal(&self) -> Image {
        let mut data = self.data.clone();
        for row in data.chunks_mut(self.width) {
            row.reverse();
        }
        Image { width: self.width, height: self.height, data }
    }

    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        self.check_same(other)?;
        let s: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs() as f64).sum();
        Ok(s / self.data.len() as f64)
    }

    pub fn mse(&self, other: &Image) -> Result<f64> {
        self.check_same(other)?;
        let s: f64 = self.data.iter().zip(&other.data).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
        Ok(s / self.data.len() as f64)
    }

    fn check_same(&self, other: &Image) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{} image",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Quantizes to 8-bit levels per channel (`-1 -> 0`, `1 -> 255`).
    pub fn to_rgb8(&self) -> Vec<u8> {
        let plane = self.width * self.height;
        let mut out = Vec::with_capacity(plane * 3);
        for i in 0..plane {
            for c in 0..3 {
                out.push(to_u8(self.data[c * plane + i]));
            }
        }
        out
    }

    /// Inverse of [`Image::to_rgb8`] for interleaved RGB bytes.
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        let plane = width * height;
        if rgb.len() != plane * 3 {
            return Err(Error::Shape(format!("{width}x{height} RGB needs {} bytes, got {}", plane * 3, rgb.len())));
        }
        let mut data = vec![0.0; plane * 3];
        for i in 0..plane {
            for c in 0..3 {
                data[c * plane + i] = from_u8(rgb[i * 3 + c]);
            }
        }
        Self::new(width, height, data)
    }

    /// Replicates a single-channel 16-bit raster to three channels.
    pub fn from_gray16(width: usize, height: usize, gray: &[u16]) -> Result<Self> {
        if gray.len() != width * height {
            return Err(Error::Shape(format!("{width}x{height} gray needs {} samples", width * height)));
        }
        let plane: Vec<f32> = gray.iter().map(|&g| (g as f64 / 32767.5 - 1.0) as f32).collect();
        Self::new(width, height, plane.repeat(3))
    }

    /// Quantizes every value to the nearest 8-bit level.
    pub fn quantized(&self) -> Image {
        let data = self.data.iter().map(|&v| from_u8(to_u8(v))).collect();
        Image { width: self.width, height: self.height, data }
    }
}

pub(crate) fn to_u8(v: f32) -> u8 {
    (((v as f64 + 1.0) * 127.5).round()).clamp(0.0, 255.0) as u8
}

pub(crate) fn from_u8(b: u8) -> f32 {
    (b as f64 / 127.5 - 1.0) as f32
}

/// Stacks images into a `(B, 3, H, W)` tensor.
pub fn batch_tensor<T: Scalar>(images: &[&Image]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| Error::invalid("empty image batch"))?;
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for im in images {
        if (im.width, im.height) != (w, h) {
            return Err(Error::Shape(format!("mixed image sizes in batch: {w}x{h} and {}x{}", im.width, im.height)));
        }
        data.extend(im.data.iter().map(|&v| T::of(v as f64)));
    }
    Ok(Tensor::new(&[images.len(), 3, h, w], data)?)
}

/// Splits a `(B, 3, H, W)` tensor into images, clamping into `[-1, 1]`.
pub fn images_from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Vec<Image>> {
    let s = t.shape();
    if s.len() != 4 || s[1] != 3 {
        return Err(Error::Shape(format!("expected (B, 3, H, W), got {s:?}")));
    }
    let per = 3 * s[2] * s[3];
    t.data()
        .chunks(per)
        .map(|c| Image::new(s[3], s[2], c.iter().map(|v| (v.as_f64() as f32).clamp(-1.0, 1.0)).collect()))
        .collect()
}
