//! Deterministic synthetic corpora: per-class ground truth, upstream
//! predictions for every key a set of recipes needs, and preliminary and
//! reference grades.
//!
//! Masks are unions of discs described in unit coordinates, so the same
//! geometry renders at both source resolutions. A prediction made on a
//! rotated input is exactly the rotated base prediction, which makes the
//! multi-angle alignment round-trip checkable.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{
    term_rotations, FusionRecipe, LesionClass, ManifestEntry, MemorySource, Model, PredictionKey,
    PredictionManifest, Resolution,
};
use crate::error::{Error, Result};
use crate::grade::{write_grades, Grade, GradeRecord};
use crate::mask::{BinaryMask, Dims, Rotation};
use crate::png_io;
use crate::raster::Raster;
use crate::store;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_images: usize,
    /// Side of the canonical grid; 1024-labelled predictions use it, 1536-labelled ones use 3/2 of it.
    pub canonical_side: usize,
    /// Foreground fraction band `[min, max]` of every generated mask, indexed by the image's severity.
    pub bands: [(f64, f64); 3],
    /// Chance that a ground-truth disc is reused by a prediction.
    pub keep_prob: f64,
    /// Chance that the preliminary grade is off by one from the reference.
    pub prelim_noise: f64,
    /// Recipes whose required keys are generated.
    pub recipes: Vec<FusionRecipe>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_images: 10,
            canonical_side: 1024,
            bands: [(0.0002, 0.0006), (0.002, 0.006), (0.008, 0.03)],
            keep_prob: 0.8,
            prelim_noise: 0.3,
            recipes: FusionRecipe::builtins().to_vec(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.canonical_side == 0 || !self.canonical_side.is_multiple_of(2) {
            return Err(Error::InvalidValue("canonical side must be even and positive".into()));
        }
        for &(lo, hi) in &self.bands {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(Error::InvalidValue(format!("bad foreground band [{lo}, {hi}]")));
            }
        }
        for r in &self.recipes {
            r.validate()?;
        }
        Ok(())
    }

    pub fn canonical(&self) -> Dims {
        Dims::square(self.canonical_side)
    }

    pub fn dims_for(&self, resolution: Resolution) -> Dims {
        match resolution {
            Resolution::R1024 => Dims::square(self.canonical_side),
            Resolution::R1536 => Dims::square(self.canonical_side * 3 / 2),
        }
    }

    /// Inclusive pixel-count band for a mask of `dims` at `severity`.
    pub fn pixel_band(&self, dims: Dims, severity: usize) -> (usize, usize) {
        let area = dims.area() as f64;
        let (lo, hi) = self.bands[severity];
        let max = ((hi * area).floor() as usize).max(1);
        let min = ((lo * area).ceil() as usize).min(max);
        (min, max)
    }

    /// Base prediction specs `(class, model, resolution)` and the rotations each needs.
    pub fn prediction_specs(&self) -> Vec<((LesionClass, Model, Resolution), BTreeSet<Rotation>)> {
        let mut specs: std::collections::BTreeMap<_, BTreeSet<Rotation>> = Default::default();
        for recipe in &self.recipes {
            for class in LesionClass::ALL {
                for term in recipe.terms(class) {
                    specs
                        .entry((class, term.model, term.resolution))
                        .or_default()
                        .extend(term_rotations(term).iter().copied());
                }
            }
        }
        specs.into_iter().collect()
    }

    /// Number of prediction files the corpus will contain.
    pub fn entry_count(&self) -> usize {
        self.n_images * self.prediction_specs().iter().map(|(_, r)| r.len()).sum::<usize>()
    }
}

/// Chance that a class-1 ground-truth disc also appears in class 3.
const OVERLAP_PROB: f64 = 0.3;

pub fn image_id(index: usize) -> String {
    format!("img{index:04}")
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Disc {
    cx: f64,
    cy: f64,
    r: f64,
}

/// Row-major canvas that only accepts discs keeping it under a pixel budget.
struct Canvas {
    dims: Dims,
    bits: Vec<bool>,
    count: usize,
}

impl Canvas {
    fn new(dims: Dims) -> Self {
        Self {
            dims,
            bits: vec![false; dims.area()],
            count: 0,
        }
    }

    fn covered(&self, d: Disc) -> Vec<usize> {
        let (w, h) = (self.dims.width as f64, self.dims.height as f64);
        let x0 = ((d.cx - d.r) * w - 0.5).floor().max(0.0) as usize;
        let x1 = (((d.cx + d.r) * w - 0.5).ceil().max(0.0) as usize).min(self.dims.width - 1);
        let y0 = ((d.cy - d.r) * h - 0.5).floor().max(0.0) as usize;
        let y1 = (((d.cy + d.r) * h - 0.5).ceil().max(0.0) as usize).min(self.dims.height - 1);
        let mut px = Vec::new();
        for y in y0..=y1 {
            let dy = (y as f64 + 0.5) / h - d.cy;
            for x in x0..=x1 {
                let dx = (x as f64 + 0.5) / w - d.cx;
                if dx * dx + dy * dy <= d.r * d.r {
                    px.push(y * self.dims.width + x);
                }
            }
        }
        px
    }

    /// Adds the disc when the result stays within `max` pixels.
    fn try_add(&mut self, d: Disc, max: usize) -> bool {
        let new: Vec<usize> = self.covered(d).into_iter().filter(|&i| !self.bits[i]).collect();
        if self.count + new.len() > max {
            return false;
        }
        self.count += new.len();
        for i in new {
            self.bits[i] = true;
        }
        true
    }
}

/// Draws discs until the mask has between `band.0` and `band.1` pixels.
/// `candidates` are tried first, each kept with `keep_prob` and jittered.
fn grow_blobs(
    rng: &mut ChaCha8Rng,
    dims: Dims,
    band: (usize, usize),
    candidates: &[Disc],
    keep_prob: f64,
) -> (BinaryMask, Vec<Disc>) {
    let (min, max) = band;
    let mut canvas = Canvas::new(dims);
    let mut placed = Vec::new();
    for &c in candidates {
        if rng.gen::<f64>() >= keep_prob {
            continue;
        }
        let d = Disc {
            cx: c.cx + rng.gen_range(-0.01..0.01),
            cy: c.cy + rng.gen_range(-0.01..0.01),
            r: c.r * rng.gen_range(0.8..1.2),
        };
        if canvas.try_add(d, max) {
            placed.push(d);
        }
    }
    // Radius that would cover about a quarter of the budget.
    let side = dims.width.max(dims.height) as f64;
    let mut r_max = ((max as f64 / 4.0) / std::f64::consts::PI).sqrt() / side;
    let pixel = 0.5 / side;
    while canvas.count < min {
        let r = if r_max <= pixel { 0.0 } else { rng.gen_range(pixel..r_max) };
        // centres snap to pixel centres so a zero radius always covers one pixel
        let px = rng.gen_range(0..dims.width);
        let py = rng.gen_range(0..dims.height);
        let d = Disc {
            cx: (px as f64 + 0.5) / dims.width as f64,
            cy: (py as f64 + 0.5) / dims.height as f64,
            r,
        };
        if canvas.try_add(d, max) {
            placed.push(d);
        } else {
            r_max *= 0.5;
        }
    }
    let mask = BinaryMask::from_bits(dims, canvas.bits).expect("canvas matches dims");
    (mask, placed)
}

/// Ground truth and grades of one synthetic image.
#[derive(Clone, Debug)]
pub struct SynthImage {
    pub image_id: String,
    pub severity: usize,
    pub ground_truth: [BinaryMask; 3],
    pub reference: Grade,
    pub prelim: Grade,
}

/// Generates one image, handing every prediction to `sink` in key order.
pub fn generate_image(
    cfg: &SynthConfig,
    index: usize,
    mut sink: impl FnMut(PredictionKey, BinaryMask) -> Result<()>,
) -> Result<SynthImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let id = image_id(index);
    let severity = rng.gen_range(0..3usize);
    let reference = Grade::from_level(severity as u8)?;
    let prelim = if rng.gen::<f64>() < cfg.prelim_noise {
        if rng.gen::<bool>() {
            reference.up()
        } else {
            reference.down()
        }
    } else {
        reference
    };
    let canonical = cfg.canonical();
    let band = cfg.pixel_band(canonical, severity);
    let (g1, d1) = grow_blobs(&mut rng, canonical, band, &[], 1.0);
    let (g2, d2) = grow_blobs(&mut rng, canonical, band, &[], 1.0);
    // IRMA and neovascularization sometimes sit on the same vessels
    let (g3, d3) = grow_blobs(&mut rng, canonical, band, &d1, OVERLAP_PROB);
    let ground_truth = [g1, g2, g3];
    let gt_discs = [d1, d2, d3];
    for ((class, model, resolution), rotations) in cfg.prediction_specs() {
        let dims = cfg.dims_for(resolution);
        let (base, _) = grow_blobs(
            &mut rng,
            dims,
            cfg.pixel_band(dims, severity),
            &gt_discs[class.index()],
            cfg.keep_prob,
        );
        for rotation in rotations {
            let key = PredictionKey::new(id.clone(), class, model, resolution, rotation);
            sink(key, base.rotate_ccw(rotation))?;
        }
    }
    Ok(SynthImage {
        image_id: id,
        severity,
        ground_truth,
        reference,
        prelim,
    })
}

/// Whole corpus in memory. Meant for small canonical sides.
pub fn generate_memory(cfg: &SynthConfig) -> Result<(MemorySource, Vec<SynthImage>)> {
    cfg.validate()?;
    let mut source = MemorySource::new(cfg.canonical());
    let mut images = Vec::with_capacity(cfg.n_images);
    for i in 0..cfg.n_images {
        images.push(generate_image(cfg, i, |k, m| {
            source.insert(k, m);
            Ok(())
        })?);
    }
    Ok((source, images))
}

/// A plausible grayscale source image for overlays.
fn source_image(img: &SynthImage) -> Raster {
    let dims = img.ground_truth[0].dims();
    let mut data = Vec::with_capacity(dims.area());
    for y in 0..dims.height {
        for x in 0..dims.width {
            let lesion = img.ground_truth.iter().any(|m| m.get(x, y));
            let texture = ((x * 7 + y * 13) % 5) as u8 * 12;
            data.push(40 + texture + if lesion { 120 } else { 0 });
        }
    }
    Raster::new(dims, 1, data).expect("dims match")
}

/// Relative path of one prediction inside a corpus directory.
pub fn prediction_path(key: &PredictionKey) -> PathBuf {
    PathBuf::from("predictions").join(&key.image_id).join(format!(
        "c{}_{}_{}_r{}.png",
        key.class, key.model, key.resolution, key.rotation
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct SynthSummary {
    pub config: SynthConfig,
    pub images: usize,
    pub prediction_files: usize,
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Writes a corpus under `out`:
///
/// - `manifest.csv` and `predictions/<id>/...png`
/// - `gt/<id>/class{1,2,3}.png`
/// - `images/<id>.png`
/// - `prelim_grades.csv`, `reference_grades.csv`, `synth.json`
pub fn write_corpus(cfg: &SynthConfig, out: &Path) -> Result<SynthSummary> {
    cfg.validate()?;
    create_dir(&out.join("images"))?;
    let per_image = (0..cfg.n_images)
        .into_par_iter()
        .map(|i| {
            let id = image_id(i);
            create_dir(&out.join("predictions").join(&id))?;
            let mut keys = Vec::new();
            let img = generate_image(cfg, i, |key, mask| {
                png_io::save_mask(&mask, out.join(prediction_path(&key)))?;
                keys.push(key);
                Ok(())
            })?;
            let [g1, g2, g3] = &img.ground_truth;
            store::write_class_masks(&out.join("gt"), &id, [g1, g2, g3])?;
            png_io::save_raster(&source_image(&img), out.join("images").join(format!("{id}.png")))?;
            Ok((img, keys))
        })
        .collect::<Result<Vec<_>>>()?;

    let variants: std::collections::BTreeMap<_, _> = cfg
        .recipes
        .iter()
        .flat_map(|r| LesionClass::ALL.into_iter().flat_map(move |c| r.terms(c).iter().map(move |t| (c, t))))
        .filter_map(|(c, t)| t.variant.map(|v| ((c, t.model), v)))
        .collect();
    let mut manifest = PredictionManifest::new(cfg.canonical());
    let mut prelim = Vec::new();
    let mut reference = Vec::new();
    for (img, keys) in &per_image {
        for key in keys {
            let entry = ManifestEntry {
                path: out.join(prediction_path(key)),
                variant: variants.get(&(key.class, key.model)).copied(),
            };
            manifest.insert(key.clone(), entry)?;
        }
        prelim.push(GradeRecord::new(img.image_id.clone(), img.prelim));
        reference.push(GradeRecord::new(img.image_id.clone(), img.reference));
    }
    manifest.write_csv(&out.join("manifest.csv"), Some(out))?;
    write_grades(&out.join("prelim_grades.csv"), &prelim)?;
    write_grades(&out.join("reference_grades.csv"), &reference)?;
    let summary = SynthSummary {
        config: cfg.clone(),
        images: cfg.n_images,
        prediction_files: manifest.len(),
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::InvalidValue(e.to_string()))?;
    let p = out.join("synth.json");
    fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))?;
    Ok(summary)
}
