//! Directory layout for per-class masks: `<dir>/<image_id>/class{1,2,3}.png`.
//!
//! Fused outputs, ground truth and evaluation inputs all use this layout.

use std::fs;
use std::path::{Path, PathBuf};

use crate::ensemble::{FusedOutput, LesionClass};
use crate::error::{Error, Result};
use crate::mask::{nearest_source, BinaryMask};
use crate::png_io;
use crate::raster::Raster;

pub fn class_mask_path(dir: &Path, image_id: &str, class: LesionClass) -> PathBuf {
    dir.join(image_id).join(format!("class{class}.png"))
}

/// Image ids present in `dir`, sorted. Any subdirectory counts as an image.
pub fn list_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_dir() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn read_class_masks(dir: &Path, image_id: &str) -> Result<[BinaryMask; 3]> {
    let [a, b, c] = LesionClass::ALL.map(|class| png_io::load_mask(class_mask_path(dir, image_id, class)));
    Ok([a?, b?, c?])
}

/// Reads a fused image back. `overlap_13` is recomputed from the masks.
pub fn read_fused(dir: &Path, image_id: &str) -> Result<FusedOutput> {
    let [o1, o2, o3] = read_class_masks(dir, image_id)?;
    let dims = o1.dims();
    for m in [&o2, &o3] {
        if m.dims() != dims {
            return Err(Error::DimMismatch {
                expected: dims,
                found: m.dims(),
            });
        }
    }
    let overlap_13 = o1.intersect(&o3)?;
    Ok(FusedOutput {
        image_id: image_id.to_string(),
        o1,
        o2,
        o3,
        overlap_13,
    })
}

pub fn write_class_masks(dir: &Path, image_id: &str, masks: [&BinaryMask; 3]) -> Result<()> {
    let sub = dir.join(image_id);
    fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    for (class, mask) in LesionClass::ALL.into_iter().zip(masks) {
        png_io::save_mask(mask, class_mask_path(dir, image_id, class))?;
    }
    Ok(())
}

pub fn write_fused(dir: &Path, fused: &FusedOutput) -> Result<()> {
    write_class_masks(dir, &fused.image_id, [&fused.o1, &fused.o2, &fused.o3])
}

/// Class colours used by [`overlay`]: red, green, blue for classes 1, 2, 3.
pub const OVERLAY_COLOURS: [[u8; 3]; 3] = [[255, 0, 0], [0, 255, 0], [0, 0, 255]];

/// RGB composite of the fused masks over a source image. The source is
/// converted to gray and resampled to the mask grid when needed; each
/// lesion class is blended at half strength.
pub fn overlay(source: &Raster, fused: &FusedOutput) -> Raster {
    let dims = fused.dims();
    let src_dims = source.dims();
    let gray = source.to_gray();
    let mut data = Vec::with_capacity(dims.area() * 3);
    for y in 0..dims.height {
        let sy = nearest_source(y, src_dims.height, dims.height);
        for x in 0..dims.width {
            let sx = nearest_source(x, src_dims.width, dims.width);
            let g = gray[sy * src_dims.width + sx] as u16;
            let mut px = [g; 3];
            for (class, colour) in LesionClass::ALL.into_iter().zip(OVERLAY_COLOURS) {
                if fused.class_mask(class).get(x, y) {
                    for c in 0..3 {
                        px[c] = (px[c] + colour[c] as u16) / 2;
                    }
                }
            }
            data.extend(px.map(|v| v as u8));
        }
    }
    Raster::new(dims, 3, data).expect("buffer matches dims")
}
