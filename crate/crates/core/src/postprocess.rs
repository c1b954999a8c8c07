//! Handling of the region where the class-1 and class-3 outputs overlap.
//!
//! Both classes keep every overlapping pixel. The stage exists so the
//! overlap is measured and reported, and so a different policy can be
//! dropped in behind [`OverlapPolicy`].

use std::path::Path;

use serde::Serialize;

use crate::ensemble::FusedOutput;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OverlapReport {
    pub image_id: String,
    pub overlap_pixels: usize,
    /// Overlap over the class-1 area; 0 when class 1 is empty.
    pub overlap_fraction_of_1: f64,
    /// Overlap over the class-3 area; 0 when class 3 is empty.
    pub overlap_fraction_of_3: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OverlapPolicy {
    /// Assign the overlap to both outputs.
    #[default]
    Both,
}

fn fraction(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

/// Returns `(o1', o3', overlap, report)` where the overlap is written into both outputs.
pub fn distribute_overlap(
    image_id: &str,
    o1: &BinaryMask,
    o3: &BinaryMask,
) -> Result<(BinaryMask, BinaryMask, BinaryMask, OverlapReport)> {
    let overlap = o1.intersect(o3)?;
    let o1_out = o1.union(&overlap)?;
    let o3_out = o3.union(&overlap)?;
    let n = overlap.pixel_count();
    let report = OverlapReport {
        image_id: image_id.to_string(),
        overlap_pixels: n,
        overlap_fraction_of_1: fraction(n, o1.pixel_count()),
        overlap_fraction_of_3: fraction(n, o3.pixel_count()),
    };
    Ok((o1_out, o3_out, overlap, report))
}

/// Runs the overlap stage on a fused image, filling `overlap_13`.
pub fn postprocess(fused: FusedOutput, policy: OverlapPolicy) -> Result<(FusedOutput, OverlapReport)> {
    match policy {
        OverlapPolicy::Both => {
            let (o1, o3, overlap_13, report) = distribute_overlap(&fused.image_id, &fused.o1, &fused.o3)?;
            Ok((
                FusedOutput {
                    o1,
                    o3,
                    overlap_13,
                    ..fused
                },
                report,
            ))
        }
    }
}

/// Writes reports as CSV with header
/// `image_id,overlap_pixels,overlap_fraction_of_1,overlap_fraction_of_3`.
pub fn write_overlap_report(path: &Path, reports: &[OverlapReport]) -> Result<()> {
    let err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in reports {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::Dims;

    #[test]
    fn disjoint_masks_untouched() {
        let d = Dims::square(4);
        let a = BinaryMask::from_fn(d, |x, _| x < 2);
        let b = a.complement();
        let (a2, b2, overlap, r) = distribute_overlap("i", &a, &b).unwrap();
        assert_eq!((a2, b2), (a, b));
        assert!(overlap.is_empty());
        assert_eq!(r.overlap_pixels, 0);
        assert_eq!(r.overlap_fraction_of_1, 0.0);
    }

    #[test]
    fn total_overlap() {
        let m = BinaryMask::from_fn(Dims::square(5), |x, y| (x + y) % 3 == 0);
        let (a, b, _, r) = distribute_overlap("i", &m, &m).unwrap();
        assert_eq!(a, m);
        assert_eq!(b, m);
        assert_eq!(r.overlap_pixels, m.pixel_count());
        assert_eq!(r.overlap_fraction_of_1, 1.0);
        assert_eq!(r.overlap_fraction_of_3, 1.0);
    }

    #[test]
    fn empty_denominators_are_zero() {
        let e = BinaryMask::empty(Dims::square(3));
        let (_, _, _, r) = distribute_overlap("i", &e, &e).unwrap();
        assert_eq!(r.overlap_fraction_of_1, 0.0);
        assert_eq!(r.overlap_fraction_of_3, 0.0);
    }

    #[test]
    fn dim_mismatch() {
        let a = BinaryMask::empty(Dims::square(3));
        let b = BinaryMask::empty(Dims::square(4));
        assert!(distribute_overlap("i", &a, &b).is_err());
    }
}
