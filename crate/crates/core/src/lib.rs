//! Multi-scale temporal network for multivariate time series.
//!
//! A compact architecture that runs an input window through a two-layer
//! convolutional pathway and a sequence core (transformer encoder or
//! bidirectional LSTM) in parallel, fuses the two summaries through a learned
//! gate, re-expands over time, applies channel recalibration and a final
//! multi-head attention pool, and feeds task heads for forecasting,
//! imputation and classification.
//!
//! Crate layout mirrors the pipeline: [`tensor`] is a self-contained
//! reverse-mode autodiff core, [`model`] builds the network on top of it,
//! [`train`] owns losses, AdamW and the fit loop, [`data`] covers datasets,
//! scaling, windowing, masking and synthetic generators, and [`eval`] has
//! task runners, metrics and the deterministic baselines.

pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
