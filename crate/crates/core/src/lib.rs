//! Weakly supervised collaborative detection.
//!
//! A two-stream weak detector and a region-based strong detector share a
//! convolutional backbone and are trained together from image-level labels
//! only. The strong detector learns from a prediction-consistency loss
//! against the weak detector's max-out regions.

pub mod error;
pub mod geometry;
pub mod model;
pub mod checks;
pub mod consistency;
pub mod data;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod strong;
pub mod weak;

pub use error::{Error, Result};
