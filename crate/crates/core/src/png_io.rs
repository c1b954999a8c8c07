//! PNG encoding for masks and rasters.
//!
//! Masks are stored as 8-bit grayscale with 0 for background and 255 for
//! foreground. On load any value >= 128 counts as foreground.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, Dims};
use crate::raster::Raster;

pub const FOREGROUND_THRESHOLD: u8 = 128;

struct Decoded {
    dims: Dims,
    color: ColorType,
    depth: BitDepth,
    data: Vec<u8>,
}

fn decode(path: &Path, bytes: Vec<u8>, transformations: Transformations) -> Result<Decoded> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(transformations);
    let decode_err = |e: png::DecodingError| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut reader = decoder.read_info().map_err(decode_err)?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::Decode {
        path: path.to_path_buf(),
        message: "image too large".into(),
    })?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(decode_err)?;
    buf.truncate(info.buffer_size());
    let dims = Dims::new(info.width as usize, info.height as usize)?;
    Ok(Decoded {
        dims,
        color: info.color_type,
        depth: info.bit_depth,
        data: buf,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn decode_mask(path: &Path, bytes: Vec<u8>) -> Result<BinaryMask> {
    let img = decode(path, bytes, Transformations::IDENTITY)?;
    if img.color != ColorType::Grayscale || img.depth != BitDepth::Eight {
        return Err(Error::UnsupportedBitDepth {
            path: path.to_path_buf(),
            found: format!("{:?} at {} bits", img.color, img.depth as u8),
        });
    }
    let bits = img.data.iter().map(|&v| v >= FOREGROUND_THRESHOLD).collect();
    BinaryMask::from_bits(img.dims, bits)
}

/// Reads an 8-bit grayscale PNG as a binary mask.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    decode_mask(path, read_file(path)?)
}

/// Reads only the PNG header.
pub fn read_dims(path: impl AsRef<Path>) -> Result<Dims> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = png::Decoder::new(std::io::BufReader::new(file))
        .read_info()
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let info = reader.info();
    Dims::new(info.width as usize, info.height as usize)
}

fn encode(dims: Dims, color: ColorType, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let encode_err = |e: png::EncodingError| Error::InvalidValue(format!("png encoding failed: {e}"));
    {
        let mut encoder = png::Encoder::new(&mut out, dims.width as u32, dims.height as u32);
        encoder.set_color(color);
        encoder.set_depth(BitDepth::Eight);
        encoder.set_compression(png::Compression::Fast);
        let mut writer = encoder.write_header().map_err(encode_err)?;
        writer.write_image_data(data).map_err(encode_err)?;
        writer.finish().map_err(encode_err)?;
    }
    Ok(out)
}

pub fn encode_mask(mask: &BinaryMask) -> Result<Vec<u8>> {
    let data: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode(mask.dims(), ColorType::Grayscale, &data)
}

pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_mask(mask)?;
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Reads any 8-bit PNG, expanding palettes and sub-byte grays.
pub fn load_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let img = decode(
        path,
        read_file(path)?,
        Transformations::EXPAND | Transformations::STRIP_16,
    )?;
    Raster::new(img.dims, img.color.samples(), img.data)
}

pub fn encode_raster(raster: &Raster) -> Result<Vec<u8>> {
    let color = match raster.channels() {
        1 => ColorType::Grayscale,
        2 => ColorType::GrayscaleAlpha,
        3 => ColorType::Rgb,
        _ => ColorType::Rgba,
    };
    encode(raster.dims(), color, raster.data())
}

pub fn save_raster(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_raster(raster)?;
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
