//! Threshold inspection: revises a preliminary DR grade from the lesion
//! pixel counts of the fused class masks.
//!
//! For each class `i`, `c_min[i]` holds when the count is strictly below the
//! lower threshold and `c_max[i]` when it is strictly above the upper one.
//! `sigma0` and `sigma1` count the true `c_min` and `c_max` conditions. The
//! revision rules only ever move a grade by one level, and samples are
//! revised independently of each other.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::FusedOutput;
use crate::error::{Error, Result};
use crate::grade::{check_same_ids, Grade, GradeRecord};
use crate::mask::Dims;

/// Lower (`t_min`) and upper (`t_max`) pixel-count thresholds per lesion class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub t_min: [u64; 3],
    pub t_max: [u64; 3],
    pub reference_dims: Dims,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        default_thresholds()
    }
}

pub fn default_thresholds() -> ThresholdConfig {
    ThresholdConfig {
        t_min: [26 * 26, 130 * 130, 28 * 28],
        t_max: [78 * 78, 750 * 750, 100 * 100],
        reference_dims: Dims::square(1024),
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            if self.t_min[i] == 0 || self.t_max[i] == 0 {
                return Err(Error::InvalidThresholds(format!("class {} threshold is zero", i + 1)));
            }
            if self.t_min[i] >= self.t_max[i] {
                return Err(Error::InvalidThresholds(format!(
                    "class {}: lower threshold {} must be below upper threshold {}",
                    i + 1,
                    self.t_min[i],
                    self.t_max[i]
                )));
            }
        }
        Dims::new(self.reference_dims.width, self.reference_dims.height)?;
        Ok(())
    }

    /// Reads a TOML document; missing keys fall back to the defaults.
    pub fn load(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Partial {
            t_min: Option<[u64; 3]>,
            t_max: Option<[u64; 3]>,
            reference_dims: Option<Dims>,
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: Partial = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
        let d = default_thresholds();
        let cfg = Self {
            t_min: p.t_min.unwrap_or(d.t_min),
            t_max: p.t_max.unwrap_or(d.t_max),
            reference_dims: p.reference_dims.unwrap_or(d.reference_dims),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("threshold config serializes")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LesionCounts {
    pub o1: u64,
    pub o2: u64,
    pub o3: u64,
}

impl LesionCounts {
    pub fn new(o1: u64, o2: u64, o3: u64) -> Self {
        Self { o1, o2, o3 }
    }

    pub fn as_array(&self) -> [u64; 3] {
        [self.o1, self.o2, self.o3]
    }

    pub fn of(fused: &FusedOutput) -> Self {
        Self {
            o1: fused.o1.pixel_count() as u64,
            o2: fused.o2.pixel_count() as u64,
            o3: fused.o3.pixel_count() as u64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionVector {
    pub c_min: [bool; 3],
    pub c_max: [bool; 3],
    pub sigma0: u8,
    pub sigma1: u8,
}

/// Indicator: 1 for a true condition, 0 otherwise.
fn indicator(condition: bool) -> u8 {
    u8::from(condition)
}

impl ConditionVector {
    /// Builds a vector with sigmas derived from the flags.
    pub fn from_flags(c_min: [bool; 3], c_max: [bool; 3]) -> Self {
        Self {
            c_min,
            c_max,
            sigma0: c_min.iter().map(|&c| indicator(c)).sum(),
            sigma1: c_max.iter().map(|&c| indicator(c)).sum(),
        }
    }

    pub fn check(&self) -> Result<()> {
        let s0: u8 = self.c_min.iter().map(|&c| indicator(c)).sum();
        let s1: u8 = self.c_max.iter().map(|&c| indicator(c)).sum();
        if s0 != self.sigma0 || s1 != self.sigma1 {
            return Err(Error::InconsistentConditionVector(format!(
                "sigma0={} sigma1={} but flags give {s0} and {s1}",
                self.sigma0, self.sigma1
            )));
        }
        if let Some(i) = (0..3).find(|&i| self.c_min[i] && self.c_max[i]) {
            return Err(Error::InconsistentConditionVector(format!(
                "class {} is both below its lower and above its upper threshold",
                i + 1
            )));
        }
        Ok(())
    }

    /// Index of the single false `c_min` when `sigma0 == 2`.
    fn failing_min(&self) -> Option<usize> {
        if self.sigma0 != 2 {
            return None;
        }
        self.c_min.iter().position(|&c| !c)
    }
}

pub fn evaluate_conditions(counts: &LesionCounts, th: &ThresholdConfig) -> ConditionVector {
    let o = counts.as_array();
    let c_min = [0, 1, 2].map(|i| o[i] < th.t_min[i]);
    let c_max = [0, 1, 2].map(|i| o[i] > th.t_max[i]);
    ConditionVector::from_flags(c_min, c_max)
}

/// How the single failing lower-threshold condition is re-examined when
/// `sigma0 == 2`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InspectionMode {
    /// The failing class must itself exceed its upper threshold.
    #[default]
    SameIndex,
    /// Any class exceeding its upper threshold suffices.
    AnyIndex,
}

impl std::str::FromStr for InspectionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same-index" => Ok(InspectionMode::SameIndex),
            "any-index" => Ok(InspectionMode::AnyIndex),
            other => Err(Error::InvalidValue(format!("unknown inspection mode {other:?}"))),
        }
    }
}

impl fmt::Display for InspectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InspectionMode::SameIndex => "same-index",
            InspectionMode::AnyIndex => "any-index",
        })
    }
}

/// Which branch of the revision table decided the outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rule {
    /// Normal, sigma0 = 3: kept.
    NormalAllMin,
    /// Normal, sigma0 = 2, failing class confirmed by an upper condition: up to NPDR.
    NormalPartialPass,
    /// Normal, sigma0 = 2, not confirmed: kept.
    NormalPartialFail,
    /// Normal, sigma0 <= 1: up to NPDR.
    NormalFewMin,
    /// NPDR, sigma0 = 3: down to Normal.
    NpdrAllMin,
    /// NPDR, sigma0 <= 2, sigma1 = 3: up to PDR.
    NpdrAllMax,
    /// NPDR, sigma0 <= 2, sigma1 < 3: kept.
    NpdrKeep,
    /// PDR, sigma0 = 3: down to NPDR.
    PdrAllMin,
    /// PDR, sigma0 = 2, confirmed: kept.
    PdrPartialPass,
    /// PDR, sigma0 = 2, not confirmed: down to NPDR.
    PdrPartialFail,
    /// PDR, sigma0 <= 1: kept.
    PdrFewMin,
}

impl Rule {
    pub const fn id(self) -> &'static str {
        match self {
            Rule::NormalAllMin => "N-σ3",
            Rule::NormalPartialPass => "N-σ2-pass",
            Rule::NormalPartialFail => "N-σ2-fail",
            Rule::NormalFewMin => "N-σ≤1",
            Rule::NpdrAllMin => "D-σ3",
            Rule::NpdrAllMax => "D-σ≤2-max3",
            Rule::NpdrKeep => "D-σ≤2-keep",
            Rule::PdrAllMin => "P-σ3",
            Rule::PdrPartialPass => "P-σ2-pass",
            Rule::PdrPartialFail => "P-σ2-fail",
            Rule::PdrFewMin => "P-σ≤1",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

pub fn revise_grade(prelim: Grade, cv: &ConditionVector, mode: InspectionMode) -> Result<(Grade, Rule)> {
    cv.check()?;
    let confirmed = |j: usize| match mode {
        InspectionMode::SameIndex => cv.c_max[j],
        InspectionMode::AnyIndex => cv.sigma1 >= 1,
    };
    let out = match (prelim, cv.sigma0) {
        (Grade::Normal, 3) => (Grade::Normal, Rule::NormalAllMin),
        (Grade::Normal, 2) => {
            let j = cv.failing_min().expect("sigma0 == 2 has one false flag");
            if confirmed(j) {
                (Grade::Npdr, Rule::NormalPartialPass)
            } else {
                (Grade::Normal, Rule::NormalPartialFail)
            }
        }
        (Grade::Normal, _) => (Grade::Npdr, Rule::NormalFewMin),
        (Grade::Npdr, 3) => (Grade::Normal, Rule::NpdrAllMin),
        (Grade::Npdr, _) if cv.sigma1 == 3 => (Grade::Pdr, Rule::NpdrAllMax),
        (Grade::Npdr, _) => (Grade::Npdr, Rule::NpdrKeep),
        (Grade::Pdr, 3) => (Grade::Npdr, Rule::PdrAllMin),
        (Grade::Pdr, 2) => {
            let j = cv.failing_min().expect("sigma0 == 2 has one false flag");
            if confirmed(j) {
                (Grade::Pdr, Rule::PdrPartialPass)
            } else {
                (Grade::Npdr, Rule::PdrPartialFail)
            }
        }
        (Grade::Pdr, _) => (Grade::Pdr, Rule::PdrFewMin),
    };
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RevisionRecord {
    pub image_id: String,
    pub preliminary: Grade,
    pub revised: Grade,
    pub counts: LesionCounts,
    pub conditions: ConditionVector,
    pub rule_fired: Rule,
}

impl RevisionRecord {
    pub fn audit_header() -> &'static str {
        "image_id,preliminary,revised,o1,o2,o3,c_min,c_max,sigma0,sigma1,rule"
    }

    /// One CSV audit line; flags are written as three-character T/F strings.
    pub fn audit_line(&self) -> String {
        let flags = |f: [bool; 3]| f.iter().map(|&b| if b { 'T' } else { 'F' }).collect::<String>();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.image_id,
            self.preliminary,
            self.revised,
            self.counts.o1,
            self.counts.o2,
            self.counts.o3,
            flags(self.conditions.c_min),
            flags(self.conditions.c_max),
            self.conditions.sigma0,
            self.conditions.sigma1,
            self.rule_fired
        )
    }
}

/// Writes the audit header and one line per record.
pub fn write_audit(path: &Path, records: &[RevisionRecord]) -> Result<()> {
    let mut text = String::from(RevisionRecord::audit_header());
    text.push('\n');
    for r in records {
        text.push_str(&r.audit_line());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Revises one sample from its fused lesion counts.
pub fn revise_sample(
    image_id: &str,
    prelim: Grade,
    counts: LesionCounts,
    th: &ThresholdConfig,
    mode: InspectionMode,
) -> Result<RevisionRecord> {
    let conditions = evaluate_conditions(&counts, th);
    let (revised, rule_fired) = revise_grade(prelim, &conditions, mode)?;
    Ok(RevisionRecord {
        image_id: image_id.to_string(),
        preliminary: prelim,
        revised,
        counts,
        conditions,
        rule_fired,
    })
}

/// Revises every sample. Output is sorted by `image_id`.
pub fn revise_batch(
    prelim: &[GradeRecord],
    fused: &[FusedOutput],
    th: &ThresholdConfig,
    mode: InspectionMode,
) -> Result<Vec<RevisionRecord>> {
    let counts = fused
        .iter()
        .map(|f| {
            if f.dims() != th.reference_dims {
                return Err(Error::DimMismatch {
                    expected: th.reference_dims,
                    found: f.dims(),
                });
            }
            Ok((f.image_id.as_str(), LesionCounts::of(f)))
        })
        .collect::<Result<Vec<_>>>()?;
    revise_counts(prelim, &counts, th, mode)
}

/// As [`revise_batch`], from counts measured elsewhere.
pub fn revise_counts(
    prelim: &[GradeRecord],
    counts: &[(&str, LesionCounts)],
    th: &ThresholdConfig,
    mode: InspectionMode,
) -> Result<Vec<RevisionRecord>> {
    let mut by_id = std::collections::BTreeMap::new();
    for (id, c) in counts {
        if by_id.insert(*id, *c).is_some() {
            return Err(Error::DuplicateId(id.to_string()));
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for r in prelim {
        if !seen.insert(r.image_id.as_str()) {
            return Err(Error::DuplicateId(r.image_id.clone()));
        }
    }
    check_same_ids(prelim.iter().map(|r| r.image_id.as_str()), by_id.keys().copied())?;
    let mut out = prelim
        .par_iter()
        .map(|r| revise_sample(&r.image_id, r.grade, by_id[r.image_id.as_str()], th, mode))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Ok(out)
}
