//! DR severity grades and the two-column grade CSV format.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Grade {
    Normal = 0,
    /// Non-proliferative DR.
    Npdr = 1,
    /// Proliferative DR.
    Pdr = 2,
}

impl Grade {
    pub const ALL: [Grade; 3] = [Grade::Normal, Grade::Npdr, Grade::Pdr];

    pub const fn level(self) -> u8 {
        self as u8
    }

    pub fn from_level(level: u8) -> Result<Self> {
        match level {
            0 => Ok(Grade::Normal),
            1 => Ok(Grade::Npdr),
            2 => Ok(Grade::Pdr),
            other => Err(Error::InvalidValue(format!("grade must be 0, 1 or 2, got {other}"))),
        }
    }

    pub fn up(self) -> Self {
        match self {
            Grade::Normal => Grade::Npdr,
            _ => Grade::Pdr,
        }
    }

    pub fn down(self) -> Self {
        match self {
            Grade::Pdr => Grade::Npdr,
            _ => Grade::Normal,
        }
    }
}

impl TryFrom<u8> for Grade {
    type Error = Error;
    fn try_from(level: u8) -> Result<Self> {
        Grade::from_level(level)
    }
}

impl From<Grade> for u8 {
    fn from(g: Grade) -> u8 {
        g.level()
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.level())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GradeRecord {
    pub image_id: String,
    pub grade: Grade,
}

impl GradeRecord {
    pub fn new(image_id: impl Into<String>, grade: Grade) -> Self {
        Self {
            image_id: image_id.into(),
            grade,
        }
    }
}

/// Reads a `image_id,grade` CSV. Duplicate ids are rejected.
pub fn read_grades(path: &Path) -> Result<Vec<GradeRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (row, rec) in reader.deserialize::<GradeRecord>().enumerate() {
        let rec = rec.map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::parse(path, format!("line {}: {other:?}", row + 2)),
        })?;
        if !seen.insert(rec.image_id.clone()) {
            return Err(Error::DuplicateId(rec.image_id));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_grades(path: &Path, records: &[GradeRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    if records.is_empty() {
        writer
            .write_record(["image_id", "grade"])
            .map_err(|e| csv_err(path, e))?;
    }
    for r in records {
        writer.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    }
}

/// Fails with `IdMismatch` unless both id sets are equal.
pub fn check_same_ids<'a>(
    left: impl IntoIterator<Item = &'a str>,
    right: impl IntoIterator<Item = &'a str>,
) -> Result<()> {
    let l: BTreeSet<&str> = left.into_iter().collect();
    let r: BTreeSet<&str> = right.into_iter().collect();
    if l == r {
        return Ok(());
    }
    Err(Error::IdMismatch {
        only_left: l.difference(&r).map(|s| s.to_string()).collect(),
        only_right: r.difference(&l).map(|s| s.to_string()).collect(),
    })
}
