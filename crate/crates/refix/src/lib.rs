//! Semi-supervised image classification engine.
//!
//! The crate trains a classifier from a small labeled set plus a large
//! unlabeled set by splitting each unlabeled batch on prediction confidence:
//! confident samples get hard pseudo-labels and a cross-entropy term, the
//! rest get temperature-sharpened soft targets and a KL term, so every
//! unlabeled sample contributes to every step. Everything runs on a small
//! tape-based autodiff core over dense tensors; no external ML runtime.
//!
//! Module map:
//! - [`tensor`], [`ops`], [`tape`]: dense tensors, kernels, reverse-mode AD
//! - [`models`]: MLP and small convnet, EMA shadow weights
//! - [`augment`]: weak flip/crop and strong randomized transform pipelines
//! - [`objective`]: sharpening, confidence branching, the combined loss
//! - [`trainer`]: SGD + cosine schedule training loop and evaluation
//! - [`data`]: tensor file format, manifests, splits, synthetic datasets
//! - [`metrics`]: error rates, macro P/R/F1, AUC, calibration
//!
//! Determinism is a first-class contract: given one seed, training produces
//! bit-identical logs and checkpoints, with or without the `parallel`
//! feature (rayon), at any worker count.

pub mod augment;
pub mod data;
pub mod error;
pub mod metrics;
pub mod models;
pub mod objective;
pub mod ops;
pub mod par;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
