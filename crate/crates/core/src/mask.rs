//! Binary lesion masks and the exact geometric primitives used by every
//! other stage: rotation, flipping, nearest-neighbour resizing and the
//! per-pixel set operations.
//!
//! Coordinates are `(x, y)` with `x` growing to the right and `y` growing
//! downwards; buffers are row-major.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raster size in pixels. Both sides are strictly positive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

impl Dims {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDims { width, height });
        }
        Ok(Self { width, height })
    }

    /// Square dims. Panics on zero.
    pub const fn square(side: usize) -> Self {
        assert!(side > 0, "side must be positive");
        Self {
            width: side,
            height: side,
        }
    }

    pub const fn area(self) -> usize {
        self.width * self.height
    }

    pub const fn is_square(self) -> bool {
        self.width == self.height
    }

    pub const fn transposed(self) -> Self {
        Self {
            width: self.height,
            height: self.width,
        }
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// Counterclockwise rotation by a multiple of 90 degrees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];

    /// The three non-identity rotations used for multi-angle prediction.
    pub const TURNS: [Rotation; 3] = [Rotation::R90, Rotation::R180, Rotation::R270];

    pub const fn degrees(self) -> u32 {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }

    pub fn from_degrees(degrees: u32) -> Result<Self> {
        match degrees {
            0 => Ok(Rotation::R0),
            90 => Ok(Rotation::R90),
            180 => Ok(Rotation::R180),
            270 => Ok(Rotation::R270),
            other => Err(Error::InvalidValue(format!(
                "rotation must be 0, 90, 180 or 270 degrees, got {other}"
            ))),
        }
    }

    /// The rotation that undoes this one.
    pub const fn inverse(self) -> Self {
        match self {
            Rotation::R0 => Rotation::R0,
            Rotation::R90 => Rotation::R270,
            Rotation::R180 => Rotation::R180,
            Rotation::R270 => Rotation::R90,
        }
    }

    pub const fn then(self, other: Rotation) -> Self {
        let quarter_turns = (self.degrees() + other.degrees()) / 90 % 4;
        Rotation::ALL[quarter_turns as usize]
    }

    pub const fn swaps_axes(self) -> bool {
        matches!(self, Rotation::R90 | Rotation::R270)
    }
}

impl TryFrom<u32> for Rotation {
    type Error = Error;

    fn try_from(degrees: u32) -> Result<Self> {
        Rotation::from_degrees(degrees)
    }
}

impl From<Rotation> for u32 {
    fn from(r: Rotation) -> u32 {
        r.degrees()
    }
}

impl fmt::Display for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.degrees())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipAxis {
    /// Mirror left-right: `(x, y) -> (W-1-x, y)`.
    Horizontal,
    /// Mirror top-bottom: `(x, y) -> (x, H-1-y)`.
    Vertical,
}

/// A lossless geometric transform of the pixel grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum GridTransform {
    Rotate(Rotation),
    Flip(FlipAxis),
}

impl GridTransform {
    fn output_dims(self, dims: Dims) -> Dims {
        match self {
            GridTransform::Rotate(r) if r.swaps_axes() => dims.transposed(),
            _ => dims,
        }
    }

    /// Source pixel feeding output pixel `(x, y)`.
    #[inline]
    fn source(self, dims: Dims, x: usize, y: usize) -> (usize, usize) {
        let (w, h) = (dims.width, dims.height);
        match self {
            GridTransform::Rotate(Rotation::R0) => (x, y),
            // forward map (x, y) -> (y, W-1-x)
            GridTransform::Rotate(Rotation::R90) => (w - 1 - y, x),
            GridTransform::Rotate(Rotation::R180) => (w - 1 - x, h - 1 - y),
            // forward map (x, y) -> (H-1-y, x)
            GridTransform::Rotate(Rotation::R270) => (y, h - 1 - x),
            GridTransform::Flip(FlipAxis::Horizontal) => (w - 1 - x, y),
            GridTransform::Flip(FlipAxis::Vertical) => (x, h - 1 - y),
        }
    }

    /// Applies the transform to a row-major buffer of `channels`-wide pixels.
    pub(crate) fn apply<T: Copy>(self, data: &[T], dims: Dims, channels: usize) -> (Vec<T>, Dims) {
        debug_assert_eq!(data.len(), dims.area() * channels);
        let out_dims = self.output_dims(dims);
        let mut out = Vec::with_capacity(data.len());
        for y in 0..out_dims.height {
            for x in 0..out_dims.width {
                let (sx, sy) = self.source(dims, x, y);
                let start = (sy * dims.width + sx) * channels;
                out.extend_from_slice(&data[start..start + channels]);
            }
        }
        (out, out_dims)
    }
}

/// Nearest-neighbour source index using pixel-centre sampling:
/// `floor((i + 0.5) * src / dst)`, evaluated in integers.
#[inline]
pub(crate) fn nearest_source(i: usize, src: usize, dst: usize) -> usize {
    ((2 * i + 1) * src) / (2 * dst)
}

/// A foreground/background raster. `true` marks lesion foreground.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    dims: Dims,
    bits: Vec<bool>,
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BinaryMask")
            .field("dims", &self.dims)
            .field("pixel_count", &self.pixel_count())
            .finish()
    }
}

impl BinaryMask {
    pub fn empty(dims: Dims) -> Self {
        Self {
            dims,
            bits: vec![false; dims.area()],
        }
    }

    pub fn full(dims: Dims) -> Self {
        Self {
            dims,
            bits: vec![true; dims.area()],
        }
    }

    pub fn from_bits(dims: Dims, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != dims.area() {
            return Err(Error::BufferLength {
                len: bits.len(),
                expected: dims.area(),
            });
        }
        Ok(Self { dims, bits })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(dims.area());
        for y in 0..dims.height {
            for x in 0..dims.width {
                bits.push(f(x, y));
            }
        }
        Self { dims, bits }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn into_bits(self) -> Vec<bool> {
        self.bits
    }

    /// Panics when `(x, y)` lies outside the mask.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        assert!(x < self.dims.width && y < self.dims.height, "pixel out of bounds");
        self.bits[y * self.dims.width + x]
    }

    /// Number of foreground pixels.
    pub fn pixel_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn complement(&self) -> Self {
        Self {
            dims: self.dims,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// Rotates counterclockwise. 90 and 270 degree turns swap width and height.
    pub fn rotate_ccw(&self, rotation: Rotation) -> Self {
        self.transform(GridTransform::Rotate(rotation))
    }

    pub fn flip(&self, axis: FlipAxis) -> Self {
        self.transform(GridTransform::Flip(axis))
    }

    pub(crate) fn transform(&self, t: GridTransform) -> Self {
        let (bits, dims) = t.apply(&self.bits, self.dims, 1);
        Self { dims, bits }
    }

    pub fn resize_nearest(&self, target: Dims) -> Self {
        if target == self.dims {
            return self.clone();
        }
        let src = self.dims;
        let cols: Vec<usize> = (0..target.width)
            .map(|x| nearest_source(x, src.width, target.width))
            .collect();
        let mut bits = Vec::with_capacity(target.area());
        for y in 0..target.height {
            let row = nearest_source(y, src.height, target.height) * src.width;
            bits.extend(cols.iter().map(|&sx| self.bits[row + sx]));
        }
        Self { dims: target, bits }
    }

    fn check_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimMismatch {
                expected: self.dims,
                found: other.dims,
            });
        }
        Ok(())
    }

    fn zip_with(&self, other: &BinaryMask, op: impl Fn(bool, bool) -> bool) -> Result<Self> {
        self.check_dims(other)?;
        Ok(Self {
            dims: self.dims,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| op(a, b))
                .collect(),
        })
    }

    /// Per-pixel logical OR.
    pub fn union(&self, other: &BinaryMask) -> Result<Self> {
        self.zip_with(other, |a, b| a | b)
    }

    /// Per-pixel logical AND.
    pub fn intersect(&self, other: &BinaryMask) -> Result<Self> {
        self.zip_with(other, |a, b| a & b)
    }

    /// In-place OR, used when folding many masks together.
    pub(crate) fn union_in_place(&mut self, other: &BinaryMask) -> Result<()> {
        self.check_dims(other)?;
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }

    /// Every foreground pixel of `self` is also foreground in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims == other.dims && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}
