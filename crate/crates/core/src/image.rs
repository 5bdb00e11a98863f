//! Dense row-major `f64` images.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Contract(format!(
                "{}×{}×{} image needs {} values, got {}",
                width,
                height,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.idx(x, y) + c]
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = self.idx(x, y);
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = self.idx(x, y);
        &mut self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub(crate) fn expect_shape(&self, what: &str, w: usize, h: usize, c: usize) -> Result<()> {
        if self.width != w || self.height != h || self.channels != c {
            return Err(Error::Contract(format!(
                "{what}: expected {w}×{h}×{c}, got {}×{}×{}",
                self.width, self.height, self.channels
            )));
        }
        Ok(())
    }

    /// Quantizes every value in `[lo, hi]` to one of 256 levels, in place.
    pub fn quantize_u8(&mut self, lo: f64, hi: f64) {
        for v in &mut self.data {
            *v = dequantize_u8(quantize_u8(*v, lo, hi), lo, hi);
        }
    }
}

pub fn quantize_u8(v: f64, lo: f64, hi: f64) -> u8 {
    (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn dequantize_u8(q: u8, lo: f64, hi: f64) -> f64 {
    lo + (q as f64 / 255.0) * (hi - lo)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_is_idempotent() {
        for q in 0..=255u8 {
            let v = dequantize_u8(q, -1.0, 1.0);
            assert_eq!(quantize_u8(v, -1.0, 1.0), q);
            let v = dequantize_u8(q, 0.0, 1.0);
            assert_eq!(quantize_u8(v, 0.0, 1.0), q);
        }
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Image::from_vec(2, 2, 3, vec![0.0; 11]).is_err());
    }
}
