//! Diffusion-model anomalous sound detection.
//!
//! Normal machine sounds are turned into log-mel windows, a U-Net noise
//! predictor learns their distribution, and test windows are scored by
//! partially noising, reconstructing with DDPM/DDIM and filtering the
//! reconstruction residual (TopK / ReLU "anomalies filter").

// `!(x >= 0.0)` rejects NaN along with negatives; index loops mirror the maths
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod audio;
pub mod config;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod features;
pub mod nn;
pub mod pipeline;
pub mod scoring;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
