//! Planar RGB images with values in `[0, 1]`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Three-channel image, channel-planar, each plane row-major (`y * width + x`).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGB {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageRGB {
    pub fn new(width: usize, height: usize, fill: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDims(format!("image dims must be >= 1, got {width}x{height}")));
        }
        check_unit(fill)?;
        Ok(ImageRGB { width, height, data: vec![fill; 3 * width * height] })
    }

    /// Takes 3 planes' worth of data, each value in `[0, 1]`.
    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDims(format!("image dims must be >= 1, got {width}x{height}")));
        }
        if data.len() != 3 * width * height {
            return Err(Error::InvalidDims(format!(
                "data length {} does not match 3x{width}x{height}",
                data.len()
            )));
        }
        for &v in &data {
            check_unit(v)?;
        }
        Ok(ImageRGB { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, channel: usize, x: usize, y: usize) -> f64 {
        self.data[(channel * self.height + y) * self.width + x]
    }

    /// One channel plane, row-major.
    pub fn channel(&self, channel: usize) -> &[f64] {
        let plane = self.width * self.height;
        &self.data[channel * plane..(channel + 1) * plane]
    }

    /// Elementwise transform in storage order; the result is clamped to `[0, 1]`.
    pub fn map_clamped(&self, mut f: impl FnMut(f64) -> f64) -> ImageRGB {
        ImageRGB {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
        }
    }

    /// Per-pixel transform with channel and position; clamped to `[0, 1]`.
    pub fn map_indexed_clamped(&self, mut f: impl FnMut(usize, usize, usize, f64) -> f64) -> ImageRGB {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..3 {
            for y in 0..self.height {
                for x in 0..self.width {
                    data.push(f(c, x, y, self.get(c, x, y)).clamp(0.0, 1.0));
                }
            }
        }
        ImageRGB { width: self.width, height: self.height, data }
    }

    /// Mutable access for in-place synthesis; callers must re-clamp.
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub(crate) fn idx(&self, channel: usize, x: usize, y: usize) -> usize {
        (channel * self.height + y) * self.width + x
    }

    /// Mean over all channels and pixels.
    pub fn mean(&self) -> f64 {
        let sum: f64 = self.data.iter().sum();
        sum / self.data.len() as f64
    }
}

fn check_unit(v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!("pixel value {v} outside [0, 1]")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range() {
        assert!(ImageRGB::new(2, 2, 1.5).is_err());
        assert!(ImageRGB::from_vec(1, 1, vec![0.0, -0.1, 0.5]).is_err());
    }

    #[test]
    fn channel_planes() {
        let data: Vec<f64> = (0..12).map(|i| i as f64 / 12.0).collect();
        let img = ImageRGB::from_vec(2, 2, data).unwrap();
        assert_eq!(img.channel(1), &[4.0 / 12.0, 5.0 / 12.0, 6.0 / 12.0, 7.0 / 12.0]);
        assert_eq!(img.get(2, 1, 0), 9.0 / 12.0);
    }
}
