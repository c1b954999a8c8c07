//! Prediction manifests: the explicit index from (image, class, model,
//! resolution, input rotation) to mask files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ensemble::recipe::{LesionClass, Model, Resolution, Variant};
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, Dims, Rotation};
use crate::png_io;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PredictionKey {
    pub image_id: String,
    pub class: LesionClass,
    pub model: Model,
    pub resolution: Resolution,
    /// Counterclockwise rotation applied to the network input.
    pub rotation: Rotation,
}

impl PredictionKey {
    pub fn new(
        image_id: impl Into<String>,
        class: LesionClass,
        model: Model,
        resolution: Resolution,
        rotation: Rotation,
    ) -> Self {
        Self {
            image_id: image_id.into(),
            class,
            model,
            resolution,
            rotation,
        }
    }
}

impl fmt::Display for PredictionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "image={} class={} model={} resolution={} rotation={}",
            self.image_id, self.class, self.model, self.resolution, self.rotation
        )
    }
}

impl Serialize for PredictionKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Anything that can hand out prediction masks by key.
pub trait MaskSource {
    /// Size every fused output is rescaled to.
    fn canonical_dims(&self) -> Dims;
    fn contains(&self, key: &PredictionKey) -> bool;
    fn load(&self, key: &PredictionKey) -> Result<BinaryMask>;
    /// Distinct image ids, sorted.
    fn image_ids(&self) -> Vec<String>;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub variant: Option<Variant>,
}

/// One CSV row of a manifest file.
#[derive(Debug, Serialize, Deserialize)]
struct ManifestRecord {
    image_id: String,
    class: u8,
    model: String,
    #[serde(default)]
    variant: String,
    resolution: u32,
    rotation: u32,
    path: String,
}

/// File-backed prediction index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictionManifest {
    pub entries: BTreeMap<PredictionKey, ManifestEntry>,
    pub canonical: Dims,
}

pub const DEFAULT_CANONICAL: Dims = Dims::square(1024);

impl Default for PredictionManifest {
    fn default() -> Self {
        Self::new(DEFAULT_CANONICAL)
    }
}

impl PredictionManifest {
    pub fn new(canonical: Dims) -> Self {
        Self {
            entries: BTreeMap::new(),
            canonical,
        }
    }

    pub fn insert(&mut self, key: PredictionKey, entry: ManifestEntry) -> Result<()> {
        if self.entries.contains_key(&key) {
            return Err(Error::InvalidValue(format!("duplicate manifest key: {key}")));
        }
        self.entries.insert(key, entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses a manifest CSV with header
    /// `image_id,class,model,variant,resolution,rotation,path`.
    /// Relative paths resolve against the manifest's directory.
    pub fn read_csv(path: &Path, canonical: Dims) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut manifest = Self::new(canonical);
        for (row, record) in reader.deserialize::<ManifestRecord>().enumerate() {
            let line = row + 2;
            let rec = record.map_err(|e| csv_err(path, e))?;
            let at_line = |e: Error| Error::parse(path, format!("line {line}: {e}"));
            let key = PredictionKey {
                image_id: rec.image_id,
                class: LesionClass::from_number(rec.class).map_err(at_line)?,
                model: Model::from_tag(rec.model.trim()).map_err(at_line)?,
                resolution: Resolution::from_pixels(rec.resolution).map_err(at_line)?,
                rotation: Rotation::from_degrees(rec.rotation).map_err(at_line)?,
            };
            let variant = match rec.variant.trim() {
                "" => None,
                v => Some(Variant::from_tag(v).map_err(at_line)?),
            };
            let file = PathBuf::from(&rec.path);
            let file = if file.is_absolute() { file } else { base.join(file) };
            manifest
                .insert(key, ManifestEntry { path: file, variant })
                .map_err(at_line)?;
        }
        Ok(manifest)
    }

    /// Writes the manifest as CSV. Paths under `relative_to` are written relative to it.
    pub fn write_csv(&self, path: &Path, relative_to: Option<&Path>) -> Result<()> {
        let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        for (key, entry) in &self.entries {
            let file = match relative_to {
                Some(base) => entry.path.strip_prefix(base).unwrap_or(&entry.path),
                None => &entry.path,
            };
            writer
                .serialize(ManifestRecord {
                    image_id: key.image_id.clone(),
                    class: key.class.number(),
                    model: key.model.tag().to_string(),
                    variant: entry.variant.map(|v| v.to_string()).unwrap_or_default(),
                    resolution: key.resolution.pixels(),
                    rotation: key.rotation.degrees(),
                    path: file.to_string_lossy().replace('\\', "/"),
                })
                .map_err(|e| csv_err(path, e))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }

    /// Filesystem checks: every referenced file exists, decodes, and all masks
    /// sharing an (image, resolution) pair have the same square dims.
    pub fn check_files(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut seen: BTreeMap<(&str, Resolution), (Dims, &Path)> = BTreeMap::new();
        for (key, entry) in &self.entries {
            let dims = match png_io::read_dims(&entry.path) {
                Ok(d) => d,
                Err(e) => {
                    problems.push(format!("{key}: {e}"));
                    continue;
                }
            };
            if !dims.is_square() {
                problems.push(format!("{key}: mask {} is {dims}, expected square", entry.path.display()));
            }
            match seen.get(&(key.image_id.as_str(), key.resolution)) {
                Some(&(first, first_path)) if first != dims => problems.push(format!(
                    "{key}: mask is {dims} but {} is {first}",
                    first_path.display()
                )),
                Some(_) => {}
                None => {
                    seen.insert((key.image_id.as_str(), key.resolution), (dims, &entry.path));
                }
            }
        }
        problems
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    }
}

impl MaskSource for PredictionManifest {
    fn canonical_dims(&self) -> Dims {
        self.canonical
    }

    fn contains(&self, key: &PredictionKey) -> bool {
        self.entries.contains_key(key)
    }

    fn load(&self, key: &PredictionKey) -> Result<BinaryMask> {
        let entry = self
            .entries
            .get(key)
            .ok_or_else(|| Error::MissingPrediction(key.to_string()))?;
        png_io::load_mask(&entry.path)
    }

    fn image_ids(&self) -> Vec<String> {
        let ids: BTreeSet<&str> = self.entries.keys().map(|k| k.image_id.as_str()).collect();
        ids.into_iter().map(String::from).collect()
    }
}

/// In-memory prediction store, used by tests and the synthetic generator.
#[derive(Clone, Debug, Default)]
pub struct MemorySource {
    pub masks: BTreeMap<PredictionKey, BinaryMask>,
    pub canonical: Option<Dims>,
}

impl MemorySource {
    pub fn new(canonical: Dims) -> Self {
        Self {
            masks: BTreeMap::new(),
            canonical: Some(canonical),
        }
    }

    pub fn insert(&mut self, key: PredictionKey, mask: BinaryMask) {
        self.masks.insert(key, mask);
    }
}

impl MaskSource for MemorySource {
    fn canonical_dims(&self) -> Dims {
        self.canonical.unwrap_or(DEFAULT_CANONICAL)
    }

    fn contains(&self, key: &PredictionKey) -> bool {
        self.masks.contains_key(key)
    }

    fn load(&self, key: &PredictionKey) -> Result<BinaryMask> {
        self.masks
            .get(key)
            .cloned()
            .ok_or_else(|| Error::MissingPrediction(key.to_string()))
    }

    fn image_ids(&self) -> Vec<String> {
        let ids: BTreeSet<&str> = self.masks.keys().map(|k| k.image_id.as_str()).collect();
        ids.into_iter().map(String::from).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let mask_path = dir.path().join("p.png");
        png_io::save_mask(&BinaryMask::full(Dims::square(4)), &mask_path).unwrap();
        let mut m = PredictionManifest::new(Dims::square(4));
        let key = PredictionKey::new("img1", LesionClass::NonPerfusion, Model::ConvNext, Resolution::R1536, Rotation::R0);
        m.insert(
            key.clone(),
            ManifestEntry {
                path: mask_path.clone(),
                variant: Some(Variant::L),
            },
        )
        .unwrap();
        let csv_path = dir.path().join("manifest.csv");
        m.write_csv(&csv_path, Some(dir.path())).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert_eq!(
            text,
            "image_id,class,model,variant,resolution,rotation,path\nimg1,2,c,L,1536,0,p.png\n"
        );
        let back = PredictionManifest::read_csv(&csv_path, Dims::square(4)).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.load(&key).unwrap().pixel_count(), 16);
        assert!(back.check_files().is_empty());
    }

    #[test]
    fn bad_rotation_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(
            &p,
            "image_id,class,model,variant,resolution,rotation,path\na,1,m,,1536,0,x.png\na,1,m,,1536,45,y.png\n",
        )
        .unwrap();
        let err = PredictionManifest::read_csv(&p, DEFAULT_CANONICAL).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn duplicate_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(
            &p,
            "image_id,class,model,variant,resolution,rotation,path\na,1,m,,1536,0,x.png\na,1,m,,1536,0,y.png\n",
        )
        .unwrap();
        assert!(PredictionManifest::read_csv(&p, DEFAULT_CANONICAL).is_err());
    }

    #[test]
    fn check_files_flags_missing_and_mismatched() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        png_io::save_mask(&BinaryMask::empty(Dims::square(6)), &a).unwrap();
        png_io::save_mask(&BinaryMask::empty(Dims::square(5)), &b).unwrap();
        let mut m = PredictionManifest::default();
        let k = |model, rot| PredictionKey::new("x", LesionClass::Irma, model, Resolution::R1536, rot);
        m.insert(k(Model::Mae, Rotation::R0), ManifestEntry { path: a, variant: None }).unwrap();
        m.insert(k(Model::Mae, Rotation::R90), ManifestEntry { path: b, variant: None }).unwrap();
        m.insert(
            k(Model::SegFormer, Rotation::R0),
            ManifestEntry {
                path: dir.path().join("gone.png"),
                variant: None,
            },
        )
        .unwrap();
        let problems = m.check_files();
        assert_eq!(problems.len(), 2, "{problems:?}");
    }
}
