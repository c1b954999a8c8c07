use std::fmt;
use std::fs;
use std::path::Path;

use lesionfuse::augment::{expand_dataset, DatasetManifest};
use lesionfuse::ensemble::{fuse_images, validate_manifest, FusionRecipe, LesionClass, MaskSource, PredictionManifest};
use lesionfuse::grade::{check_same_ids, read_grades, write_grades, GradeRecord};
use lesionfuse::metrics::{
    binary_confusion, grade_confusion, quadratic_weighted_kappa, score_confusions, GradeConfusion, SegMode, SegReport,
};
use lesionfuse::postprocess::{postprocess, write_overlap_report, OverlapPolicy};
use lesionfuse::synth::{write_corpus, SynthConfig};
use lesionfuse::tim::{default_thresholds, revise_batch, write_audit, InspectionMode, ThresholdConfig};
use lesionfuse::{png_io, store, Dims, Error};
use rayon::prelude::*;
use serde::Serialize;

use crate::{AugmentArgs, EvalKappaArgs, EvalSegArgs, FuseArgs, GradeReviseArgs, SynthArgs};

/// Exit code 1 for filesystem and decoding failures, 2 for inputs that are
/// readable but inconsistent.
#[derive(Debug)]
pub enum Failure {
    Io(String),
    Invalid(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Invalid(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Io(m) | Failure::Invalid(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Invalid(e.to_string())
        }
    }
}

fn create_dir(p: &Path) -> Result<(), Failure> {
    fs::create_dir_all(p).map_err(|e| Failure::Io(format!("cannot create {}: {e}", p.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Invalid(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
}

#[derive(Serialize)]
struct FusedImageSummary<'a> {
    image_id: &'a str,
    o1_pixels: usize,
    o2_pixels: usize,
    o3_pixels: usize,
    overlap_pixels: usize,
}

#[derive(Serialize)]
struct FuseSummary<'a> {
    recipe: &'a str,
    canonical: String,
    images: usize,
    per_image: Vec<FusedImageSummary<'a>>,
}

pub fn fuse(a: &FuseArgs) -> Result<(), Failure> {
    let recipe = FusionRecipe::resolve(&a.recipe)?;
    let canonical = Dims::new(a.canonical, a.canonical)?;
    let manifest = PredictionManifest::read_csv(&a.manifest, canonical)?;
    let report = validate_manifest(&manifest, &recipe);
    if !report.is_ok() {
        eprint!("{report}");
        return Err(Failure::Invalid(format!(
            "manifest lacks {} predictions required by recipe {}",
            report.missing.len(),
            recipe.name
        )));
    }
    let problems = manifest.check_files();
    if !problems.is_empty() {
        for p in &problems {
            eprintln!("{p}");
        }
        return Err(Failure::Invalid(format!("{} manifest entries failed file checks", problems.len())));
    }
    let ids = manifest.image_ids();
    let fused = fuse_images(&manifest, &recipe, &ids)
        .into_par_iter()
        .map(|f| postprocess(f?, OverlapPolicy::Both))
        .collect::<Result<Vec<_>, Error>>()?;

    create_dir(&a.out)?;
    let images_dir = a
        .images
        .clone()
        .unwrap_or_else(|| a.manifest.parent().unwrap_or(Path::new(".")).join("images"));
    fused.par_iter().try_for_each(|(f, _)| -> Result<(), Error> {
        store::write_fused(&a.out, f)?;
        if a.emit_overlays {
            let src = png_io::load_raster(images_dir.join(format!("{}.png", f.image_id)))?;
            png_io::save_raster(&store::overlay(&src, f), a.out.join(&f.image_id).join("overlay.png"))?;
        }
        Ok(())
    })?;
    let reports: Vec<_> = fused.iter().map(|(_, r)| r.clone()).collect();
    write_overlap_report(&a.out.join("overlap_report.csv"), &reports)?;
    let summary = FuseSummary {
        recipe: &recipe.name,
        canonical: canonical.to_string(),
        images: fused.len(),
        per_image: fused
            .iter()
            .map(|(f, r)| FusedImageSummary {
                image_id: &f.image_id,
                o1_pixels: f.o1.pixel_count(),
                o2_pixels: f.o2.pixel_count(),
                o3_pixels: f.o3.pixel_count(),
                overlap_pixels: r.overlap_pixels,
            })
            .collect(),
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    for s in &summary.per_image {
        println!(
            "image={} o1={} o2={} o3={} overlap={}",
            s.image_id, s.o1_pixels, s.o2_pixels, s.o3_pixels, s.overlap_pixels
        );
    }
    println!("fused {} images with recipe {} into {}", summary.images, recipe.name, a.out.display());
    Ok(())
}

/// Scores `<pred>/<id>/class{k}.png` against `<gt>/<id>/class{k}.png`.
pub fn evaluate_dirs(pred: &Path, gt: &Path, mode: SegMode) -> Result<SegReport, Error> {
    let pred_ids = store::list_ids(pred)?;
    let gt_ids = store::list_ids(gt)?;
    check_same_ids(pred_ids.iter().map(String::as_str), gt_ids.iter().map(String::as_str))?;
    if pred_ids.is_empty() {
        return Err(Error::InvalidValue(format!("no images under {}", pred.display())));
    }
    let per_image = pred_ids
        .par_iter()
        .map(|id| {
            let p = store::read_class_masks(pred, id)?;
            let g = store::read_class_masks(gt, id)?;
            let mut out = [Default::default(); 3];
            for k in 0..3 {
                out[k] = binary_confusion(&p[k], &g[k])?;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let classes = LesionClass::ALL
        .into_iter()
        .map(|class| {
            let column: Vec<_> = per_image.iter().map(|c| c[class.index()]).collect();
            score_confusions(class, &column, mode)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    SegReport::from_scores(mode, classes)
}

pub fn eval_seg(a: &EvalSegArgs) -> Result<(), Failure> {
    let report = evaluate_dirs(&a.pred, &a.gt, a.seg_mode)?;
    print!("{report}");
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_text(&out.join("seg_report.txt"), &report.to_string())?;
        write_json(&out.join("seg_report.json"), &report)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RevisionSummary {
    mode: InspectionMode,
    thresholds: ThresholdConfig,
    images: usize,
    changed: usize,
}

pub fn grade_revise(a: &GradeReviseArgs) -> Result<(), Failure> {
    let th = match &a.thresholds {
        Some(p) => ThresholdConfig::load(p)?,
        None => default_thresholds(),
    };
    let prelim = read_grades(&a.prelim)?;
    let ids = store::list_ids(&a.fused)?;
    check_same_ids(prelim.iter().map(|r| r.image_id.as_str()), ids.iter().map(String::as_str))?;
    let fused = ids
        .par_iter()
        .map(|id| store::read_fused(&a.fused, id))
        .collect::<Result<Vec<_>, Error>>()?;
    let records = revise_batch(&prelim, &fused, &th, a.mode).map_err(|e| match e {
        // masks at the wrong size cannot be compared with the thresholds
        Error::DimMismatch { .. } => Failure::Io(format!("fused masks do not match the threshold grid: {e}")),
        other => other.into(),
    })?;
    create_dir(&a.out)?;
    let revised: Vec<_> = records
        .iter()
        .map(|r| GradeRecord::new(r.image_id.clone(), r.revised))
        .collect();
    write_grades(&a.out.join("revised_grades.csv"), &revised)?;
    write_audit(&a.out.join("audit.csv"), &records)?;
    let summary = RevisionSummary {
        mode: a.mode,
        thresholds: th,
        images: records.len(),
        changed: records.iter().filter(|r| r.revised != r.preliminary).count(),
    };
    write_json(&a.out.join("revision_summary.json"), &summary)?;
    for r in &records {
        println!("{}", r.audit_line());
    }
    println!("revised {} of {} grades", summary.changed, summary.images);
    Ok(())
}

#[derive(Serialize)]
struct KappaSummary {
    kappa: f64,
    confusion: GradeConfusion,
}

pub fn eval_kappa(a: &EvalKappaArgs) -> Result<(), Failure> {
    let assigned = read_grades(&a.assigned)?;
    let reference = read_grades(&a.reference)?;
    let confusion = grade_confusion(&assigned, &reference)?;
    let kappa = quadratic_weighted_kappa(&confusion)?;
    println!("kappa={kappa:.4}");
    print!("{confusion}");
    if let Some(out) = &a.out {
        write_json(out, &KappaSummary { kappa, confusion })?;
    }
    Ok(())
}

pub fn augment(a: &AugmentArgs) -> Result<(), Failure> {
    let manifest = DatasetManifest::read_csv(&a.manifest)?;
    create_dir(&a.out)?;
    let report = expand_dataset(&manifest, &a.out)?;
    print!("{report}");
    write_json(&a.out.join("expansion_report.json"), &report)
}

pub fn synth(a: &SynthArgs) -> Result<(), Failure> {
    let mut cfg = SynthConfig {
        seed: a.seed,
        n_images: a.n_images,
        canonical_side: a.canonical,
        ..Default::default()
    };
    if !a.recipe.is_empty() {
        cfg.recipes = a
            .recipe
            .iter()
            .map(|r| FusionRecipe::resolve(r))
            .collect::<Result<_, _>>()?;
    }
    create_dir(&a.out)?;
    let summary = write_corpus(&cfg, &a.out)?;
    println!(
        "wrote {} images and {} predictions to {}",
        summary.images,
        summary.prediction_files,
        a.out.display()
    );
    Ok(())
}
