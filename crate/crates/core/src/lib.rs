//! Nuclei-density patch selection and majority-vote classification of
//! H&E-stained breast histology images.
//!
//! The flow for one image:
//!
//! 1. [`bluemask::compute_blue_mask`] marks pixels whose blue channel
//!    exceeds 1.587 × red.
//! 2. [`tiler::select_patches`] scores a 299 px grid (stride 149) by bluish
//!    fraction and keeps the densest patches according to the whole-image
//!    density tier.
//! 3. Each patch goes through a [`classify::PatchClassifier`].
//! 4. [`aggregate::majority_vote`] picks the image label, breaking ties
//!    invasive > in situ > benign > normal.
//!
//! [`evaluate`] builds the confusion matrices and accuracy tables, and
//! [`pipeline`] ties everything to manifests and output files.

pub mod aggregate;
pub mod augment;
pub mod bluemask;
pub mod classify;
pub mod config;
pub mod evaluate;
pub mod manifest;
pub mod overlay;
pub mod pipeline;
pub mod raster;
pub mod synthetic;
pub mod tiler;

pub use aggregate::{majority_vote, ImageDecision};
pub use bluemask::{compute_blue_mask, MaskConfig};
pub use classify::{ClassLabel, ClassProbabilities, PatchClassifier};
pub use config::RunConfig;
pub use raster::{BlueMask, RegionRect, RgbRaster};
pub use tiler::{select_patches, PatchGeometry, SelectionReport};
