//! 8-bit interleaved rasters (source images), transformed with the same
//! grid primitives as masks.

use crate::error::{Error, Result};
use crate::mask::{Dims, FlipAxis, GridTransform, Rotation};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    dims: Dims,
    channels: usize,
    data: Vec<u8>,
}

impl Raster {
    /// `channels` is 1 (gray), 2 (gray+alpha), 3 (RGB) or 4 (RGBA).
    pub fn new(dims: Dims, channels: usize, data: Vec<u8>) -> Result<Self> {
        if !(1..=4).contains(&channels) {
            return Err(Error::InvalidValue(format!("unsupported channel count {channels}")));
        }
        if data.len() != dims.area() * channels {
            return Err(Error::BufferLength {
                len: data.len(),
                expected: dims.area() * channels,
            });
        }
        Ok(Self {
            dims,
            channels,
            data,
        })
    }

    pub fn filled(dims: Dims, channels: usize, value: u8) -> Result<Self> {
        Self::new(dims, channels, vec![value; dims.area() * channels])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let start = (y * self.dims.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn rotate_ccw(&self, rotation: Rotation) -> Self {
        self.transform(GridTransform::Rotate(rotation))
    }

    pub fn flip(&self, axis: FlipAxis) -> Self {
        self.transform(GridTransform::Flip(axis))
    }

    pub(crate) fn transform(&self, t: GridTransform) -> Self {
        let (data, dims) = t.apply(&self.data, self.dims, self.channels);
        Self {
            dims,
            channels: self.channels,
            data,
        }
    }

    /// Luma of every pixel; alpha is dropped, RGB uses integer Rec.601 weights.
    pub fn to_gray(&self) -> Vec<u8> {
        self.data
            .chunks_exact(self.channels)
            .map(|px| match px.len() {
                1 | 2 => px[0],
                _ => {
                    let (r, g, b) = (px[0] as u32, px[1] as u32, px[2] as u32);
                    ((299 * r + 587 * g + 114 * b + 500) / 1000) as u8
                }
            })
            .collect()
    }
}
