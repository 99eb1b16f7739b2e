//! Self-supervised vision transformers for chest radiographs: group-masked
//! pretraining, classification and segmentation fine-tuning, metrics and
//! attention heatmaps.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used for training.

pub mod checkpoint;
pub mod cls;
pub mod data;
pub mod error;
pub mod gmml;
pub mod heatmap;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod pretrain;
pub mod rng;
pub mod scalar;
pub mod seg;
pub mod vit;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Training precision.
pub type Real = f32;
pub type PretrainModelF32 = pretrain::PretrainModel<f32>;
pub type ClsModelF32 = cls::ClsModel<f32>;
pub type SegModelF32 = seg::SegModel<f32>;
pub type PretrainModelF64 = pretrain::PretrainModel<f64>;
pub type ClsModelF64 = cls::ClsModel<f64>;
pub type SegModelF64 = seg::SegModel<f64>;
