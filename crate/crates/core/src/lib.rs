//! Post-network pipeline for diabetic-retinopathy lesion segmentation on
//! UW-OCTA images.
//!
//! Upstream networks are treated as producers of binary mask files. This
//! crate fuses those masks into one output per lesion class, scores the
//! result, and uses the fused lesion areas to revise preliminary DR grades.
//!
//! - [`mask`], [`png_io`], [`raster`]: mask representation, geometry and PNG files
//! - [`ensemble`]: manifests, recipes and multi-angle / multi-scale fusion
//! - [`postprocess`]: class-1 / class-3 overlap handling
//! - [`metrics`]: IoU, Dice, mean DSC and quadratic weighted kappa
//! - [`tim`]: threshold inspection and grade revision
//! - [`augment`]: six-way geometric dataset expansion
//! - [`store`]: per-class mask directories and overlays
//! - [`synth`]: deterministic synthetic corpora for testing

pub mod augment;
pub mod ensemble;
pub mod error;
pub mod grade;
pub mod mask;
pub mod metrics;
pub mod png_io;
pub mod postprocess;
pub mod raster;
pub mod store;
pub mod synth;
pub mod tim;

pub use error::{Error, Result};
pub use mask::{BinaryMask, Dims, FlipAxis, Rotation};
