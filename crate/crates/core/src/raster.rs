//! Plain in-memory panorama rasters.

use crate::error::{Error, Result};
use crate::geometry::ImageDims;

/// Three-channel 32-bit float image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorImage {
    pub dims: ImageDims,
    pub pixels: Vec<[f32; 3]>,
}

impl ColorImage {
    pub fn new(dims: ImageDims, pixels: Vec<[f32; 3]>) -> Result<Self> {
        if pixels.len() != dims.pixel_count() {
            return Err(Error::Contract(format!(
                "{} pixels supplied for a {dims} image",
                pixels.len()
            )));
        }
        Ok(Self { dims, pixels })
    }

    pub fn filled(dims: ImageDims, value: [f32; 3]) -> Self {
        Self {
            dims,
            pixels: vec![value; dims.pixel_count()],
        }
    }

    pub fn from_fn(dims: ImageDims, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let pixels = dims.pixels().map(|(x, y)| f(x, y)).collect();
        Self { dims, pixels }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.pixels[self.dims.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: [f32; 3]) {
        let i = self.dims.index(x, y);
        self.pixels[i] = v;
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .flat_map(|p| p.map(quantize_unit))
            .collect()
    }

    pub fn from_rgb8(dims: ImageDims, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != dims.pixel_count() * 3 {
            return Err(Error::Contract("rgb8 buffer size mismatch".into()));
        }
        let pixels = bytes
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]].map(|v| v as f32 / 255.0))
            .collect();
        Ok(Self { dims, pixels })
    }
}

/// Maps `[0, 1]` to `0..=255` with rounding; values outside are clamped.
pub fn quantize_unit(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
