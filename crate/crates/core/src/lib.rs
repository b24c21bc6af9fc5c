//! Two-stream instance segmentation on synthetic scenes.
//!
//! An object stream predicts classes, boxes and per-anchor fg/bg
//! representations; a pixel stream produces a per-pixel embedding. Correlating
//! the two yields instance masks, and the masks in turn refine the boxes.

pub mod config;
pub mod corr_crop;
pub mod datagen;
pub mod error;
pub mod geometry;
pub mod mbrm;
pub mod model;
pub mod numerics;
pub mod pipeline;

pub use error::{Error, Result};
pub use geometry::BBox;
