//! Out-of-distribution detection from neural activation means.
//!
//! An off-the-shelf classifier already carries a summary of its training set
//! in its per-channel activation means: batch normalization tracks them as
//! running averages. This crate trains a small batch-normalized ConvNet,
//! measures how far an input's per-channel means drift from those training
//! means (the neural mean discrepancy, NMD), and classifies the resulting
//! vector as in-distribution or OOD with a lightweight detector.
//!
//! The crate is `no_std` with `alloc`. Everything here is pure computation;
//! file formats, dataset loading from disk, benchmarking and the CLI live in
//! the `nmd-toolkit` crate.
//!
//! Module map:
//!
//! - [`tensor`], [`nn`]: dense tensors and the hand-written layer set
//!   (conv, batch norm, ReLU, average pooling, fully connected, softmax
//!   cross-entropy) with backprop and SGD.
//! - [`model`]: the 4-layer ConvNet and single-pass activation statistics.
//! - [`nmd`]: reference statistics, NMD/NVD vectors, the averaged-magnitude score.
//! - [`detector`]: standardizer, logistic regression, MLP, layer importance.
//! - [`metrics`]: AUROC, TNR at 95% TPR, detection accuracy.
//! - [`data`]: image datasets, synthetic generators, block permutation,
//!   protocol splits and byte codecs.
//! - [`pipeline`]: glue that runs datasets through a model into NMD vectors.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod detector;
mod error;
pub(crate) mod math;
pub mod metrics;
pub mod model;
pub mod nmd;
pub mod nn;
pub mod pipeline;
pub mod rng;
mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
