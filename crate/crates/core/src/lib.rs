//! Climate reconstruction from raw tree-ring width data.
//!
//! The crate covers the traditional multi-step pipeline (standardization of
//! ring widths into a chronology, then univariate statistical calibration
//! against the observed climate) and a family of joint Bayesian hierarchical
//! models fit with a built-in block Gibbs sampler. A synthetic-data generator
//! and a model-checking suite (hold-out validation, averaged residuals) round
//! out the toolkit.

pub mod calibrate;
pub mod check;
pub mod ingest;
pub mod mcmc;
pub mod models;
pub mod simulate;
pub mod spline;
pub mod standardize;
pub mod stats;

pub use ingest::{AgeMatrix, ClimateSeries, RingWidthDataset};
pub use models::{ModelName, ModelSpec};
pub use standardize::Chronology;
