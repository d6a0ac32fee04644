//! Binary ultrasound image classification toolkit.
//!
//! The crate covers the whole workflow for a two-class (Healthy / Unhealthy)
//! frame classifier built by transfer learning:
//!
//! * [`dataset`]: directory scanning, class statistics, stratified splits and
//!   pixel-intensity histograms,
//! * [`preprocess`]: fixed-size resizing, normalization and label encoding,
//! * [`model`]: backbone registry plus the custom classification head,
//! * [`training`]: binary cross-entropy, class weights, the Adam training loop
//!   and checkpoints,
//! * [`evaluation`]: confusion matrix, accuracy/precision/recall/F1 and ROC-AUC,
//! * [`interpretability`]: LIME superpixel explanations and gradient saliency,
//! * [`reporting`]: charts, comparison tables, predictions and timings,
//! * [`config`]: the JSON run configuration used by the `sonoclass` binary.

pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod interpretability;
pub mod model;
pub mod preprocess;
pub mod reporting;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result, WeightsError};
