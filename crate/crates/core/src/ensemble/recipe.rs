//! Fusion recipes: which upstream predictions are unioned into each
//! lesion-class output.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upstream segmentation network that produced a prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Model {
    /// Masked-autoencoder pretrained ViT.
    #[serde(rename = "m")]
    Mae,
    #[serde(rename = "c")]
    ConvNext,
    #[serde(rename = "s")]
    SegFormer,
}

impl Model {
    pub const ALL: [Model; 3] = [Model::Mae, Model::ConvNext, Model::SegFormer];

    pub const fn tag(self) -> &'static str {
        match self {
            Model::Mae => "m",
            Model::ConvNext => "c",
            Model::SegFormer => "s",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "m" => Ok(Model::Mae),
            "c" => Ok(Model::ConvNext),
            "s" => Ok(Model::SegFormer),
            other => Err(Error::InvalidValue(format!("unknown model tag {other:?}"))),
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Backbone size annotation. Carried as metadata; fusion ignores it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    L,
    XL,
}

impl Variant {
    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "L" => Ok(Variant::L),
            "XL" => Ok(Variant::XL),
            other => Err(Error::InvalidValue(format!("unknown model variant {other:?}"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::L => "L",
            Variant::XL => "XL",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum LesionClass {
    /// Intraretinal microvascular abnormalities.
    Irma = 1,
    NonPerfusion = 2,
    Neovascularization = 3,
}

impl LesionClass {
    pub const ALL: [LesionClass; 3] = [
        LesionClass::Irma,
        LesionClass::NonPerfusion,
        LesionClass::Neovascularization,
    ];

    pub const fn index(self) -> usize {
        self as usize - 1
    }

    pub const fn number(self) -> u8 {
        self as u8
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(LesionClass::Irma),
            2 => Ok(LesionClass::NonPerfusion),
            3 => Ok(LesionClass::Neovascularization),
            other => Err(Error::InvalidValue(format!("lesion class must be 1, 2 or 3, got {other}"))),
        }
    }
}

impl TryFrom<u8> for LesionClass {
    type Error = Error;
    fn try_from(n: u8) -> Result<Self> {
        LesionClass::from_number(n)
    }
}

impl From<LesionClass> for u8 {
    fn from(c: LesionClass) -> u8 {
        c.number()
    }
}

impl fmt::Display for LesionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Inference resolution of an upstream prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Resolution {
    R1024,
    R1536,
}

impl Resolution {
    pub const fn pixels(self) -> u32 {
        match self {
            Resolution::R1024 => 1024,
            Resolution::R1536 => 1536,
        }
    }

    pub fn from_pixels(px: u32) -> Result<Self> {
        match px {
            1024 => Ok(Resolution::R1024),
            1536 => Ok(Resolution::R1536),
            other => Err(Error::InvalidValue(format!("resolution must be 1024 or 1536, got {other}"))),
        }
    }
}

impl TryFrom<u32> for Resolution {
    type Error = Error;
    fn try_from(px: u32) -> Result<Self> {
        Resolution::from_pixels(px)
    }
}

impl From<Resolution> for u32 {
    fn from(r: Resolution) -> u32 {
        r.pixels()
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.pixels())
    }
}

/// One union operand of a class output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecipeTerm {
    pub model: Model,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    pub resolution: Resolution,
    /// Union in predictions made on the 90/180/270 degree rotated input.
    pub multi_angle: bool,
}

impl RecipeTerm {
    pub const fn new(model: Model, resolution: Resolution, multi_angle: bool) -> Self {
        Self {
            model,
            variant: None,
            resolution,
            multi_angle,
        }
    }

    pub const fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = Some(variant);
        self
    }
}

impl fmt::Display for RecipeTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.model)?;
        if let Some(v) = self.variant {
            write!(f, "[{v}]")?;
        }
        write!(f, "@{}", self.resolution)?;
        if self.multi_angle {
            f.write_str("+MA")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionRecipe {
    pub name: String,
    pub class1: Vec<RecipeTerm>,
    pub class2: Vec<RecipeTerm>,
    pub class3: Vec<RecipeTerm>,
}

impl FusionRecipe {
    pub fn terms(&self, class: LesionClass) -> &[RecipeTerm] {
        match class {
            LesionClass::Irma => &self.class1,
            LesionClass::NonPerfusion => &self.class2,
            LesionClass::Neovascularization => &self.class3,
        }
    }

    pub fn terms_mut(&mut self, class: LesionClass) -> &mut Vec<RecipeTerm> {
        match class {
            LesionClass::Irma => &mut self.class1,
            LesionClass::NonPerfusion => &mut self.class2,
            LesionClass::Neovascularization => &mut self.class3,
        }
    }

    /// Challenge recipe: MAE + SegFormer for classes 1/3, ConvNeXt-L alone for class 2.
    pub fn v1() -> Self {
        let mask_a = vec![
            RecipeTerm::new(Model::Mae, Resolution::R1536, true),
            RecipeTerm::new(Model::SegFormer, Resolution::R1024, false),
            RecipeTerm::new(Model::SegFormer, Resolution::R1536, true),
        ];
        Self {
            name: "v1".into(),
            class1: mask_a.clone(),
            class2: vec![RecipeTerm::new(Model::ConvNext, Resolution::R1536, false).with_variant(Variant::L)],
            class3: mask_a,
        }
    }

    /// Post-challenge recipe: ConvNeXt-XL joins classes 1/3 and replaces L on class 2.
    pub fn v2() -> Self {
        let convnext = RecipeTerm::new(Model::ConvNext, Resolution::R1536, true).with_variant(Variant::XL);
        let mask_a = vec![
            RecipeTerm::new(Model::Mae, Resolution::R1536, true),
            convnext,
            RecipeTerm::new(Model::SegFormer, Resolution::R1024, false),
            RecipeTerm::new(Model::SegFormer, Resolution::R1536, true),
        ];
        Self {
            name: "v2".into(),
            class1: mask_a.clone(),
            class2: vec![RecipeTerm::new(Model::ConvNext, Resolution::R1536, false).with_variant(Variant::XL)],
            class3: mask_a,
        }
    }

    /// Inspector recipe used for grade revision: as v1 but MAE alone on class 2.
    pub fn tim() -> Self {
        Self {
            name: "tim".into(),
            class2: vec![RecipeTerm::new(Model::Mae, Resolution::R1536, false)],
            ..Self::v1()
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "v1" => Some(Self::v1()),
            "v2" => Some(Self::v2()),
            "tim" => Some(Self::tim()),
            _ => None,
        }
    }

    pub fn builtins() -> [Self; 3] {
        [Self::v1(), Self::v2(), Self::tim()]
    }

    /// Resolves a built-in name or reads a JSON recipe document.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if let Some(r) = Self::builtin(name_or_path) {
            return Ok(r);
        }
        Self::load(Path::new(name_or_path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let recipe: Self = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        recipe.validate()?;
        Ok(recipe)
    }

    /// Every class needs at least one term, and no term may repeat within a class.
    pub fn validate(&self) -> Result<()> {
        for class in LesionClass::ALL {
            let terms = self.terms(class);
            if terms.is_empty() {
                return Err(Error::InvalidValue(format!(
                    "recipe {:?}: class {class} has no terms",
                    self.name
                )));
            }
            let mut seen = BTreeSet::new();
            for t in terms {
                if !seen.insert((t.model, t.resolution)) {
                    return Err(Error::InvalidValue(format!(
                        "recipe {:?}: class {class} lists {}@{} twice",
                        self.name, t.model, t.resolution
                    )));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for FusionRecipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "recipe {}", self.name)?;
        for class in LesionClass::ALL {
            let terms: Vec<String> = self.terms(class).iter().map(|t| t.to_string()).collect();
            writeln!(f, "  O{class} = {}", terms.join(" | "))?;
        }
        Ok(())
    }
}
