//! Segmentation overlap scores (IoU, Dice, mean DSC) and the quadratic
//! weighted kappa used for ordinal grade agreement.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::ensemble::LesionClass;
use crate::error::{Error, Result};
use crate::grade::{check_same_ids, Grade, GradeRecord};
use crate::mask::BinaryMask;

/// Per-pixel tallies of a prediction against ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryConfusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl BinaryConfusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `2tp / (2tp + fp + fn)`; 1.0 when both masks are empty.
    pub fn dice(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / den as f64
        }
    }

    /// `tp / (tp + fp + fn)`; 1.0 when both masks are empty.
    pub fn iou(&self) -> f64 {
        let den = self.tp + self.fp + self.fn_;
        if den == 0 {
            1.0
        } else {
            self.tp as f64 / den as f64
        }
    }
}

impl Add for BinaryConfusion {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl AddAssign for BinaryConfusion {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

pub fn binary_confusion(pred: &BinaryMask, gt: &BinaryMask) -> Result<BinaryConfusion> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimMismatch {
            expected: gt.dims(),
            found: pred.dims(),
        });
    }
    let mut c = BinaryConfusion::default();
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn dice(c: &BinaryConfusion) -> f64 {
    c.dice()
}

pub fn iou(c: &BinaryConfusion) -> f64 {
    c.iou()
}

/// How per-image confusions are reduced to a dataset score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegMode {
    /// Sum confusions over all images, then score once.
    #[default]
    Aggregate,
    /// Score each image, then average.
    PerImageMean,
}

impl std::str::FromStr for SegMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aggregate" => Ok(SegMode::Aggregate),
            "per-image-mean" => Ok(SegMode::PerImageMean),
            other => Err(Error::InvalidValue(format!("unknown segmentation mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassScore {
    pub class: LesionClass,
    pub iou: f64,
    pub dice: f64,
    pub images_counted: usize,
}

pub fn score_confusions(class: LesionClass, confusions: &[BinaryConfusion], mode: SegMode) -> Result<ClassScore> {
    if confusions.is_empty() {
        return Err(Error::InvalidValue("no images to score".into()));
    }
    let n = confusions.len();
    let (iou, dice) = match mode {
        SegMode::Aggregate => {
            let total = confusions.iter().fold(BinaryConfusion::default(), |a, &c| a + c);
            (total.iou(), total.dice())
        }
        SegMode::PerImageMean => {
            let iou = confusions.iter().map(BinaryConfusion::iou).sum::<f64>() / n as f64;
            let dice = confusions.iter().map(BinaryConfusion::dice).sum::<f64>() / n as f64;
            (iou, dice)
        }
    };
    Ok(ClassScore {
        class,
        iou,
        dice,
        images_counted: n,
    })
}

pub fn dataset_class_score(
    preds: &[BinaryMask],
    gts: &[BinaryMask],
    class: LesionClass,
    mode: SegMode,
) -> Result<ClassScore> {
    if preds.len() != gts.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: gts.len(),
        });
    }
    let confusions = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| binary_confusion(p, g))
        .collect::<Result<Vec<_>>>()?;
    score_confusions(class, &confusions, mode)
}

/// Unweighted mean of the three per-class Dice values.
pub fn mean_dsc(per_class_dice: &[f64]) -> Result<f64> {
    if per_class_dice.len() != 3 {
        return Err(Error::WrongArity(per_class_dice.len()));
    }
    Ok(per_class_dice.iter().sum::<f64>() / 3.0)
}

/// Evaluation summary across the three lesion classes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SegReport {
    pub mode: SegMode,
    pub classes: Vec<ClassScore>,
    pub mean_dsc: f64,
}

impl SegReport {
    pub fn from_scores(mode: SegMode, classes: Vec<ClassScore>) -> Result<Self> {
        let dice: Vec<f64> = classes.iter().map(|c| c.dice).collect();
        let mean_dsc = mean_dsc(&dice)?;
        Ok(Self {
            mode,
            classes,
            mean_dsc,
        })
    }
}

impl fmt::Display for SegReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.classes {
            writeln!(
                f,
                "class={} iou={:.4} dice={:.4} images={}",
                c.class, c.iou, c.dice, c.images_counted
            )?;
        }
        writeln!(f, "mean_dsc={:.4}", self.mean_dsc)
    }
}

pub const GRADE_LEVELS: usize = 3;

/// `counts[a][r]`: samples with assigned grade `a` and reference grade `r`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeConfusion {
    pub counts: [[u64; GRADE_LEVELS]; GRADE_LEVELS],
}

impl GradeConfusion {
    pub fn new(counts: [[u64; GRADE_LEVELS]; GRADE_LEVELS]) -> Self {
        Self { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn record(&mut self, assigned: Grade, reference: Grade) {
        self.counts[assigned.level() as usize][reference.level() as usize] += 1;
    }
}

impl fmt::Display for GradeConfusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "assigned\\reference      0      1      2")?;
        for (a, row) in self.counts.iter().enumerate() {
            writeln!(f, "{a:>18} {:>6} {:>6} {:>6}", row[0], row[1], row[2])?;
        }
        Ok(())
    }
}

/// Joins the two grade lists on `image_id`.
pub fn grade_confusion(assigned: &[GradeRecord], reference: &[GradeRecord]) -> Result<GradeConfusion> {
    let index = |records: &[GradeRecord]| -> Result<BTreeMap<String, Grade>> {
        let mut map = BTreeMap::new();
        for r in records {
            if map.insert(r.image_id.clone(), r.grade).is_some() {
                return Err(Error::DuplicateId(r.image_id.clone()));
            }
        }
        Ok(map)
    };
    let a = index(assigned)?;
    let r = index(reference)?;
    check_same_ids(a.keys().map(String::as_str), r.keys().map(String::as_str))?;
    let mut cm = GradeConfusion::default();
    for (id, &ga) in &a {
        cm.record(ga, r[id]);
    }
    Ok(cm)
}

/// Quadratic weighted kappa over three grades.
///
/// With weights `(i-j)^2 / (K-1)^2` and expected counts `row_i * col_j / N`,
/// the normalisation cancels and
/// `kappa = 1 - N * sum(w O) / sum(w row_i col_j)`, which is evaluated in
/// integers up to the final division.
pub fn quadratic_weighted_kappa(cm: &GradeConfusion) -> Result<f64> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::EmptyMatrix);
    }
    let mut rows = [0u128; GRADE_LEVELS];
    let mut cols = [0u128; GRADE_LEVELS];
    for (i, row) in cm.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            rows[i] += c as u128;
            cols[j] += c as u128;
        }
    }
    let mut observed = 0u128;
    let mut expected = 0u128;
    for (i, (row, &row_total)) in cm.counts.iter().zip(&rows).enumerate() {
        for (j, (&count, &col_total)) in row.iter().zip(&cols).enumerate() {
            let w = (i.abs_diff(j) * i.abs_diff(j)) as u128;
            observed += w * count as u128;
            expected += w * row_total * col_total;
        }
    }
    let observed = observed * n as u128;
    if expected == 0 {
        // All mass on a single grade in both raters; disagreement is then zero too.
        debug_assert_eq!(observed, 0);
        return Ok(1.0);
    }
    Ok(1.0 - observed as f64 / expected as f64)
}
