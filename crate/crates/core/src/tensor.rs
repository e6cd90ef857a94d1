//! Dense rank-4 feature maps and multi-scale pyramids.
//!
//! Element `(b, c, x, y)` lives at offset `((b*C + c)*W + x)*H + y`, with `x`
//! the width axis. Values are stored as `f64` in memory; the on-disk container
//! (see the `fctl` crate) is f32, and reductions are always accumulated in
//! f64 so invariant checks stay stable on large maps.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Shape of a [`FeatureMap`], in `(batch, channels, width, height)` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub batch: usize,
    pub channels: usize,
    pub width: usize,
    pub height: usize,
}

impl Dims {
    pub fn new(batch: usize, channels: usize, width: usize, height: usize) -> Self {
        Dims { batch, channels, width, height }
    }

    pub fn len(&self) -> usize {
        self.batch * self.channels * self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cells in one spatial slice.
    pub fn spatial(&self) -> usize {
        self.width * self.height
    }
}

/// Dense real-valued rank-4 array. Immutable once built; construction is the
/// only place invariants are checked, so sharing across threads is free.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    dims: Dims,
    data: Vec<f64>,
}

impl FeatureMap {
    /// Map of the given dims with every element set to `fill`.
    pub fn new(dims: Dims, fill: f64) -> Result<Self> {
        Self::check_dims(dims)?;
        if !fill.is_finite() {
            return Err(Error::Domain(format!("non-finite fill value {fill}")));
        }
        Ok(FeatureMap { dims, data: vec![fill; dims.len()] })
    }

    /// Takes ownership of `data` laid out per the index law.
    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        Self::check_dims(dims)?;
        if data.len() != dims.len() {
            return Err(Error::InvalidDims(format!(
                "data length {} does not match dims {:?} (expected {})",
                data.len(),
                dims,
                dims.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite element {bad}")));
        }
        Ok(FeatureMap { dims, data })
    }

    fn check_dims(dims: Dims) -> Result<()> {
        if dims.batch == 0 || dims.channels == 0 || dims.width == 0 || dims.height == 0 {
            return Err(Error::InvalidDims(format!("all dims must be >= 1, got {dims:?}")));
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn offset(&self, b: usize, c: usize, x: usize, y: usize) -> usize {
        ((b * self.dims.channels + c) * self.dims.width + x) * self.dims.height + y
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, x: usize, y: usize) -> f64 {
        self.data[self.offset(b, c, x, y)]
    }

    /// One spatial slice as a contiguous `width*height` block.
    pub fn slice(&self, b: usize, c: usize) -> &[f64] {
        let start = self.offset(b, c, 0, 0);
        &self.data[start..start + self.dims.spatial()]
    }

    /// Applies `f` elementwise, producing a new map. `f` must return finite values.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> FeatureMap {
        FeatureMap { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Elementwise combination with a same-shaped map.
    pub fn zip(&self, other: &FeatureMap, f: impl Fn(f64, f64) -> f64) -> Result<FeatureMap> {
        self.check_same_dims(other)?;
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(FeatureMap { dims: self.dims, data })
    }

    pub fn check_same_dims(&self, other: &FeatureMap) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        Ok(())
    }

    /// Mean over all elements, accumulated in f64 in index order.
    pub fn mean(&self) -> f64 {
        let sum: f64 = self.data.iter().sum();
        sum / self.data.len() as f64
    }

    /// Rounds every element to the nearest f32, the on-disk precision.
    pub fn quantize_f32(&self) -> FeatureMap {
        FeatureMap { dims: self.dims, data: self.data.iter().map(|&v| v as f32 as f64).collect() }
    }

    /// Filled from a function of the index, in index law order.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Result<Self> {
        Self::check_dims(dims)?;
        let mut data = Vec::with_capacity(dims.len());
        for b in 0..dims.batch {
            for c in 0..dims.channels {
                for x in 0..dims.width {
                    for y in 0..dims.height {
                        data.push(f(b, c, x, y));
                    }
                }
            }
        }
        Self::from_vec(dims, data)
    }
}

/// Ordered list of feature maps, largest spatial extent first.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    levels: Vec<FeatureMap>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<FeatureMap>) -> Result<Self> {
        let first = levels
            .first()
            .ok_or_else(|| Error::InvalidDims("pyramid must have at least one level".into()))?;
        let (batch, channels) = (first.dims().batch, first.dims().channels);
        let mut prev = first.dims();
        for (i, level) in levels.iter().enumerate().skip(1) {
            let d = level.dims();
            if d.batch != batch || d.channels != channels {
                return Err(Error::ShapeMismatch(format!(
                    "level {i} has batch/channels {:?}, level 0 has ({batch}, {channels})",
                    (d.batch, d.channels)
                )));
            }
            if d.width > prev.width || d.height > prev.height {
                return Err(Error::InvalidDims(format!(
                    "level {i} spatial dims {:?} exceed previous level {:?}",
                    (d.width, d.height),
                    (prev.width, prev.height)
                )));
            }
            prev = d;
        }
        Ok(FeaturePyramid { levels })
    }

    pub fn levels(&self) -> &[FeatureMap] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}
