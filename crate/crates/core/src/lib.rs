//! Core algorithms for benchmarking how ECG sampling frequency affects
//! deep-learning atrial-fibrillation detection.
//!
//! The crate is organised along the pipeline:
//!
//! - [`store`]: ECGB record files and the cohort manifest.
//! - [`preprocess`]: cleaning, clipping, FFT resampling, z-scoring,
//!   segmentation and quality control.
//! - [`cohort`]: label filtering, patient-safe holdout, undersampling and
//!   stratified patient-level k-fold assignment.
//! - [`nn`] / [`models`]: the CNN1D and CNN-LSTM graphs with hand-written
//!   backpropagation, plus the checkpoint format.
//! - [`trainer`]: Adam, weighted cross-entropy, early stopping and fold
//!   orchestration.
//! - [`metrics`]: discrimination and calibration metrics, curves and
//!   logit-average ensembling.
//! - [`report`]: aggregation of per-cell metrics into the comparison table.

pub mod cohort;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod preprocess;
pub mod report;
pub mod store;
pub mod synth;
pub mod trainer;

pub use cohort::{Partition, SplitAssignment};
pub use metrics::{ConfusionMatrix, PredictionSet};
pub use models::{ArchId, ModelCheckpoint, ModelGraph};
pub use store::{DatasetManifest, EcgRecord, Label, ManifestEntry};
pub use trainer::{EpochLog, Sample, TrainConfig};
