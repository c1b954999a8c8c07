//! Cross-model fusion of per-class lesion predictions.
//!
//! Each recipe term contributes one mask: the prediction on the unrotated
//! input, optionally unioned with the predictions made on 90/180/270 degree
//! rotated inputs after rotating them back. Alignment and the multi-angle
//! union happen at the term's source resolution; only then is the mask
//! rescaled to the canonical grid and unioned with the other terms.

mod manifest;
mod recipe;

use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

pub use manifest::{
    ManifestEntry, MaskSource, MemorySource, PredictionKey, PredictionManifest, DEFAULT_CANONICAL,
};
pub use recipe::{FusionRecipe, LesionClass, Model, RecipeTerm, Resolution, Variant};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, Dims, Rotation};

/// Rotations a term needs from the manifest.
pub fn term_rotations(term: &RecipeTerm) -> &'static [Rotation] {
    if term.multi_angle {
        &Rotation::ALL
    } else {
        &Rotation::ALL[..1]
    }
}

/// Every manifest key the recipe reads for one image.
pub fn required_keys(recipe: &FusionRecipe, image_id: &str) -> Vec<PredictionKey> {
    let mut keys = BTreeSet::new();
    for class in LesionClass::ALL {
        for term in recipe.terms(class) {
            for &rotation in term_rotations(term) {
                keys.insert(PredictionKey::new(image_id, class, term.model, term.resolution, rotation));
            }
        }
    }
    keys.into_iter().collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub missing: Vec<PredictionKey>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.missing.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for key in &self.missing {
            writeln!(f, "missing {key}")?;
        }
        Ok(())
    }
}

/// Lists every (image, class, term, rotation) the recipe needs but the source lacks.
pub fn validate_manifest(source: &impl MaskSource, recipe: &FusionRecipe) -> ValidationReport {
    validate_images(source, recipe, &source.image_ids())
}

pub fn validate_images(
    source: &impl MaskSource,
    recipe: &FusionRecipe,
    image_ids: &[String],
) -> ValidationReport {
    let missing = image_ids
        .iter()
        .flat_map(|id| required_keys(recipe, id))
        .filter(|k| !source.contains(k))
        .collect();
    ValidationReport { missing }
}

/// Registers a prediction made on an input rotated `input_rotation` CCW back
/// onto the unrotated frame by rotating it clockwise by the same angle.
pub fn align_rotated_prediction(pred: &BinaryMask, input_rotation: Rotation) -> Result<BinaryMask> {
    if input_rotation.swaps_axes() && !pred.dims().is_square() {
        return Err(Error::NonSquareRotation {
            dims: pred.dims(),
            rotation: input_rotation,
        });
    }
    Ok(pred.rotate_ccw(input_rotation.inverse()))
}

/// `base` unioned with every rotated-input prediction after alignment.
pub fn multi_angle_union(base: &BinaryMask, rotated: &[(Rotation, BinaryMask)]) -> Result<BinaryMask> {
    let mut seen = [false; 4];
    let mut out = base.clone();
    for (rotation, pred) in rotated {
        if *rotation == Rotation::R0 {
            return Err(Error::IdentityRotation);
        }
        let slot = &mut seen[(rotation.degrees() / 90) as usize];
        if *slot {
            return Err(Error::DuplicateRotation(*rotation));
        }
        *slot = true;
        out.union_in_place(&align_rotated_prediction(pred, *rotation)?)?;
    }
    Ok(out)
}

/// Nearest-neighbour rescale to the canonical grid; identity when already there.
pub fn canonicalize(pred: BinaryMask, canonical: Dims) -> BinaryMask {
    if pred.dims() == canonical {
        pred
    } else {
        pred.resize_nearest(canonical)
    }
}

/// The canonicalized mask contributed by one recipe term.
pub fn term_mask(
    source: &impl MaskSource,
    image_id: &str,
    class: LesionClass,
    term: &RecipeTerm,
) -> Result<BinaryMask> {
    let key = |rotation| PredictionKey::new(image_id, class, term.model, term.resolution, rotation);
    let base = source.load(&key(Rotation::R0))?;
    let merged = if term.multi_angle {
        let rotated = Rotation::TURNS
            .iter()
            .map(|&r| source.load(&key(r)).map(|m| (r, m)))
            .collect::<Result<Vec<_>>>()?;
        multi_angle_union(&base, &rotated)?
    } else {
        base
    };
    Ok(canonicalize(merged, source.canonical_dims()))
}

/// Union of all recipe terms for one class of one image.
pub fn compose_class(
    source: &impl MaskSource,
    recipe: &FusionRecipe,
    image_id: &str,
    class: LesionClass,
) -> Result<BinaryMask> {
    let mut out = BinaryMask::empty(source.canonical_dims());
    for term in recipe.terms(class) {
        out.union_in_place(&term_mask(source, image_id, class, term)?)?;
    }
    Ok(out)
}

/// Per-class fused masks of one image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FusedOutput {
    pub image_id: String,
    pub o1: BinaryMask,
    pub o2: BinaryMask,
    pub o3: BinaryMask,
    /// `o1 ∩ o3`; empty until the overlap stage runs.
    pub overlap_13: BinaryMask,
}

impl FusedOutput {
    pub fn class_mask(&self, class: LesionClass) -> &BinaryMask {
        match class {
            LesionClass::Irma => &self.o1,
            LesionClass::NonPerfusion => &self.o2,
            LesionClass::Neovascularization => &self.o3,
        }
    }

    pub fn dims(&self) -> Dims {
        self.o1.dims()
    }
}

pub fn fuse_image(source: &impl MaskSource, recipe: &FusionRecipe, image_id: &str) -> Result<FusedOutput> {
    let o1 = compose_class(source, recipe, image_id, LesionClass::Irma)?;
    let o2 = compose_class(source, recipe, image_id, LesionClass::NonPerfusion)?;
    let o3 = compose_class(source, recipe, image_id, LesionClass::Neovascularization)?;
    let overlap_13 = BinaryMask::empty(o1.dims());
    Ok(FusedOutput {
        image_id: image_id.to_string(),
        o1,
        o2,
        o3,
        overlap_13,
    })
}

/// Fuses many images on the current rayon pool. Output order follows `image_ids`.
pub fn fuse_images<S: MaskSource + Sync>(
    source: &S,
    recipe: &FusionRecipe,
    image_ids: &[String],
) -> Vec<Result<FusedOutput>> {
    image_ids
        .par_iter()
        .map(|id| fuse_image(source, recipe, id))
        .collect()
}
