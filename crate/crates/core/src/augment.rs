//! Six-way geometric dataset expansion: the original plus horizontal and
//! vertical flips and 90/180/270 degree counterclockwise rotations.
//!
//! An image and its masks always receive the identical transform. Outputs
//! are named `<image_id>__<tag>.png`.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grade::Grade;
use crate::mask::{BinaryMask, FlipAxis, GridTransform, Rotation};
use crate::png_io;
use crate::raster::Raster;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentVariant {
    Orig,
    Hflip,
    Vflip,
    R90,
    R180,
    R270,
}

impl AugmentVariant {
    pub const ALL: [AugmentVariant; 6] = [
        AugmentVariant::Orig,
        AugmentVariant::Hflip,
        AugmentVariant::Vflip,
        AugmentVariant::R90,
        AugmentVariant::R180,
        AugmentVariant::R270,
    ];

    pub const fn tag(self) -> &'static str {
        match self {
            AugmentVariant::Orig => "orig",
            AugmentVariant::Hflip => "hflip",
            AugmentVariant::Vflip => "vflip",
            AugmentVariant::R90 => "r90",
            AugmentVariant::R180 => "r180",
            AugmentVariant::R270 => "r270",
        }
    }

    fn transform(self) -> GridTransform {
        match self {
            AugmentVariant::Orig => GridTransform::Rotate(Rotation::R0),
            AugmentVariant::Hflip => GridTransform::Flip(FlipAxis::Horizontal),
            AugmentVariant::Vflip => GridTransform::Flip(FlipAxis::Vertical),
            AugmentVariant::R90 => GridTransform::Rotate(Rotation::R90),
            AugmentVariant::R180 => GridTransform::Rotate(Rotation::R180),
            AugmentVariant::R270 => GridTransform::Rotate(Rotation::R270),
        }
    }

    pub fn output_id(self, image_id: &str) -> String {
        format!("{image_id}__{}", self.tag())
    }
}

impl fmt::Display for AugmentVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Rasters that the six variants can be applied to.
pub trait Augment: Sized {
    fn augment(&self, variant: AugmentVariant) -> Self;
}

impl Augment for BinaryMask {
    fn augment(&self, variant: AugmentVariant) -> Self {
        match variant {
            AugmentVariant::Orig => self.clone(),
            v => self.transform(v.transform()),
        }
    }
}

impl Augment for Raster {
    fn augment(&self, variant: AugmentVariant) -> Self {
        match variant {
            AugmentVariant::Orig => self.clone(),
            v => self.transform(v.transform()),
        }
    }
}

/// All six tagged variants, in [`AugmentVariant::ALL`] order.
pub fn expand_image<T: Augment>(image: &T) -> Vec<(AugmentVariant, T)> {
    AugmentVariant::ALL.iter().map(|&v| (v, image.augment(v))).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetEntry {
    pub image_id: String,
    pub path: PathBuf,
    /// IRMA + neovascularization ground truth.
    pub mask_a: Option<PathBuf>,
    /// Nonperfusion ground truth.
    pub mask_b: Option<PathBuf>,
    pub grade: Option<Grade>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetRecord {
    image_id: String,
    path: String,
    #[serde(default)]
    mask_a: String,
    #[serde(default)]
    mask_b: String,
    #[serde(default)]
    grade: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<DatasetEntry>,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    }
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for e in &self.entries {
            if !ids.insert(e.image_id.as_str()) {
                return Err(Error::DuplicateId(e.image_id.clone()));
            }
        }
        Ok(())
    }

    /// Reads `image_id,path,mask_a,mask_b,grade`; empty cells mean absent.
    /// Relative paths resolve against the manifest's directory.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |s: &str| {
            let p = PathBuf::from(s);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let optional = |s: &str| (!s.trim().is_empty()).then(|| resolve(s.trim()));
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut entries = Vec::new();
        for (row, rec) in reader.deserialize::<DatasetRecord>().enumerate() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let grade = match rec.grade.trim() {
                "" => None,
                g => {
                    let level: u8 = g
                        .parse()
                        .map_err(|_| Error::parse(path, format!("line {}: bad grade {g:?}", row + 2)))?;
                    Some(Grade::from_level(level).map_err(|e| Error::parse(path, format!("line {}: {e}", row + 2)))?)
                }
            };
            entries.push(DatasetEntry {
                path: resolve(&rec.path),
                mask_a: optional(&rec.mask_a),
                mask_b: optional(&rec.mask_b),
                grade,
                image_id: rec.image_id,
            });
        }
        let m = Self { entries };
        m.validate()?;
        Ok(m)
    }

    /// Writes the manifest with paths relative to `relative_to` where possible.
    pub fn write_csv(&self, path: &Path, relative_to: Option<&Path>) -> Result<()> {
        let rel = |p: &Path| {
            let p = relative_to.and_then(|b| p.strip_prefix(b).ok()).unwrap_or(p);
            p.to_string_lossy().replace('\\', "/")
        };
        let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        for e in &self.entries {
            writer
                .serialize(DatasetRecord {
                    image_id: e.image_id.clone(),
                    path: rel(&e.path),
                    mask_a: e.mask_a.as_deref().map(rel).unwrap_or_default(),
                    mask_b: e.mask_b.as_deref().map(rel).unwrap_or_default(),
                    grade: e.grade.map(|g| g.to_string()).unwrap_or_default(),
                })
                .map_err(|e| csv_err(path, e))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }
}

/// Images with and without any foreground in one mask family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LesionSplit {
    pub with_lesions: usize,
    pub without_lesions: usize,
}

impl LesionSplit {
    fn add(&mut self, mask: &BinaryMask) {
        if mask.is_empty() {
            self.without_lesions += 1;
        } else {
            self.with_lesions += 1;
        }
    }

    fn merge(self, o: Self) -> Self {
        Self {
            with_lesions: self.with_lesions + o.with_lesions,
            without_lesions: self.without_lesions + o.without_lesions,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DatasetCounts {
    pub images: usize,
    /// Images per grade 0/1/2; ungraded entries are not counted here.
    pub per_grade: [usize; 3],
    pub mask_a: LesionSplit,
    pub mask_b: LesionSplit,
}

impl DatasetCounts {
    fn merge(self, o: Self) -> Self {
        Self {
            images: self.images + o.images,
            per_grade: [0, 1, 2].map(|g| self.per_grade[g] + o.per_grade[g]),
            mask_a: self.mask_a.merge(o.mask_a),
            mask_b: self.mask_b.merge(o.mask_b),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ExpansionReport {
    pub input: DatasetCounts,
    pub output: DatasetCounts,
}

impl fmt::Display for ExpansionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (i, o) = (&self.input, &self.output);
        writeln!(f, "{:<28}{:>8}{:>8}{:>8}{:>8}", "grade", "0", "1", "2", "total")?;
        writeln!(
            f,
            "{:<28}{:>8}{:>8}{:>8}{:>8}",
            "raw", i.per_grade[0], i.per_grade[1], i.per_grade[2], i.images
        )?;
        writeln!(
            f,
            "{:<28}{:>8}{:>8}{:>8}{:>8}",
            "augmented", o.per_grade[0], o.per_grade[1], o.per_grade[2], o.images
        )?;
        writeln!(f, "{:<28}{:>8}{:>8}", "mask", "A", "B")?;
        let rows = [
            ("raw with lesions", i.mask_a.with_lesions, i.mask_b.with_lesions),
            ("raw without lesions", i.mask_a.without_lesions, i.mask_b.without_lesions),
            ("augmented with lesions", o.mask_a.with_lesions, o.mask_b.with_lesions),
            ("augmented without lesions", o.mask_a.without_lesions, o.mask_b.without_lesions),
        ];
        for (label, a, b) in rows {
            writeln!(f, "{label:<28}{a:>8}{b:>8}")?;
        }
        Ok(())
    }
}

struct EntryResult {
    input: DatasetCounts,
    output: DatasetCounts,
    entries: Vec<DatasetEntry>,
}

fn single(grade: Option<Grade>) -> DatasetCounts {
    let mut c = DatasetCounts {
        images: 1,
        ..Default::default()
    };
    if let Some(g) = grade {
        c.per_grade[g.level() as usize] = 1;
    }
    c
}

fn write_mask_variants(
    src: &Path,
    dir: &Path,
    image_id: &str,
    split_in: &mut LesionSplit,
    split_out: &mut LesionSplit,
) -> Result<Vec<PathBuf>> {
    let mask = png_io::load_mask(src)?;
    split_in.add(&mask);
    let mut paths = Vec::with_capacity(6);
    for (v, m) in expand_image(&mask) {
        split_out.add(&m);
        let p = dir.join(format!("{}.png", v.output_id(image_id)));
        png_io::save_mask(&m, &p)?;
        paths.push(p);
    }
    Ok(paths)
}

fn expand_entry(entry: &DatasetEntry, out_dir: &Path) -> Result<EntryResult> {
    let image = png_io::load_raster(&entry.path)?;
    let mut input = single(entry.grade);
    let mut output = DatasetCounts::default();
    let mut entries = Vec::with_capacity(6);
    for (v, img) in expand_image(&image) {
        let p = out_dir.join("images").join(format!("{}.png", v.output_id(&entry.image_id)));
        png_io::save_raster(&img, &p)?;
        output = output.merge(single(entry.grade));
        entries.push(DatasetEntry {
            image_id: v.output_id(&entry.image_id),
            path: p,
            mask_a: None,
            mask_b: None,
            grade: entry.grade,
        });
    }
    if let Some(src) = &entry.mask_a {
        let paths = write_mask_variants(
            src,
            &out_dir.join("mask_a"),
            &entry.image_id,
            &mut input.mask_a,
            &mut output.mask_a,
        )?;
        for (e, p) in entries.iter_mut().zip(paths) {
            e.mask_a = Some(p);
        }
    }
    if let Some(src) = &entry.mask_b {
        let paths = write_mask_variants(
            src,
            &out_dir.join("mask_b"),
            &entry.image_id,
            &mut input.mask_b,
            &mut output.mask_b,
        )?;
        for (e, p) in entries.iter_mut().zip(paths) {
            e.mask_b = Some(p);
        }
    }
    Ok(EntryResult {
        input,
        output,
        entries,
    })
}

/// Writes every variant of every image (and its masks) under `out_dir`,
/// plus `out_dir/manifest.csv` describing the expanded set.
pub fn expand_dataset(manifest: &DatasetManifest, out_dir: &Path) -> Result<ExpansionReport> {
    manifest.validate()?;
    let mut out_ids = BTreeSet::new();
    for e in &manifest.entries {
        for v in AugmentVariant::ALL {
            let id = v.output_id(&e.image_id);
            if !out_ids.insert(id.clone()) {
                return Err(Error::DuplicateOutputId(id));
            }
        }
    }
    for sub in ["images", "mask_a", "mask_b"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let results = manifest
        .entries
        .par_iter()
        .map(|e| expand_entry(e, out_dir))
        .collect::<Result<Vec<_>>>()?;
    let mut report = ExpansionReport::default();
    let mut expanded = DatasetManifest::default();
    for r in results {
        report.input = report.input.merge(r.input);
        report.output = report.output.merge(r.output);
        expanded.entries.extend(r.entries);
    }
    expanded.write_csv(&out_dir.join("manifest.csv"), Some(out_dir))?;
    Ok(report)
}
