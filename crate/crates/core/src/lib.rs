//! Computational core for nuclear instance segmentation and classification.
//!
//! The crate covers everything around a three-branch (segmentation, HoVer,
//! classification) encoder-decoder except weight training:
//!
//! * [`raster`]: label, class, probability and HoVer raster containers.
//! * [`targets`]: connected components, centroids and HoVer regression targets.
//! * [`losses`]: MSE, (weighted) cross-entropy and Dice losses with analytic gradients.
//! * [`postprocess`]: marker-controlled watershed instance extraction and per-instance classification.
//! * [`metrics`]: dataset-aggregated multi-class panoptic quality and count R².
//! * [`blocks`]: forward-pass math for squeeze-and-excitation, coordinate attention and the heads.
//! * [`augment`]: seeded geometric and HSV augmentations.
//! * [`io`]: PNG label maps, `F32M` float maps, count CSVs and metric reports.

pub mod augment;
pub mod blocks;
pub mod error;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod postprocess;
pub mod raster;
pub mod rng;
pub mod targets;

pub use error::{Error, Result};
pub use raster::{
    ClassImage, Grid, HoverField, LabelImage, Mask, NucleusClass, OneHotStack, ProbabilityStack, RgbImage,
    NUM_CHANNELS, NUM_NUCLEUS_CLASSES,
};
