//! Bin-and-delta rotation estimation.
//!
//! A pose is first classified into one of `K` key poses (the "bin") obtained by
//! K-means over the training annotations, then refined by a regressed
//! residual (the "delta"). This crate provides the building blocks:
//!
//! - [`so3`]: axis-angle geometry (exp/log maps, geodesic distance, Jacobians)
//! - [`binning`]: K-means pose dictionaries, hard/soft labels, delta targets
//! - [`net`]: a small MLP with exact reverse-mode gradients and Adam
//! - [`models`]: baselines, the bin-and-delta loss families and training
//! - [`data`]: synthetic (optionally symmetric) datasets and CSV ingestion
//! - [`eval`]: median angle error and accuracy-at-π/6 reports

pub mod binning;
pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod net;
pub mod so3;

pub use error::{Error, Result};
