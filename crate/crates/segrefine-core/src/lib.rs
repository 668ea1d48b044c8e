//! Per-segment CNN video refinement.
//!
//! A decoded (degraded) video is partitioned into short fixed-duration
//! segments and a small convolutional network is overfit to each segment,
//! learning to reconstruct the original frames (or the coding residual).
//! The per-segment parameter sets form an array that grows with video
//! length; at playback the matching parameters are selected per frame.
//!
//! This crate holds the pure algorithmic pieces: tensor ops with exact
//! backprop, the refiner model, segmentation, the training loop, and
//! quality metrics. File formats, video IO, and the CLI live in the
//! companion `segrefine` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod segment;
pub mod train;

pub use error::CoreError;
pub use model::{ParameterSet, RefineMode, RefinerTopology};
pub use nn::{ConvSpec, LayerGradients, Tensor};
pub use segment::{ParameterArray, SegmentDescriptor, SegmentationConfig};
pub use train::{TrainingConfig, TrainingExample, TrainingReport};
