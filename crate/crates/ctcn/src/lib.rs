//! Temporal action localization on precomputed concept features.
//!
//! The crate implements a 1-D anchor-pyramid detector built from
//! concept-wise temporal convolutions, together with the surrounding
//! pipeline: synthetic data generation, training with hard negative
//! mining, soft-NMS post-processing, and mAP / AR-AN evaluation. All
//! numerics run on a small reverse-mode autodiff engine over `f64`
//! tensors, so every run is CPU-only and bit-reproducible from a seed.

pub mod anchors;
pub mod augment;
pub mod checkpoint;
pub mod conv;
pub mod data;
pub mod error;
pub mod eval;
pub mod network;
pub mod pipeline;
pub mod predict;
pub mod synth;
pub mod targets;
pub mod tensor;
pub mod train;

pub use error::{CtcnError, Result};
