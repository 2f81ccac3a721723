//! Snapshot-mosaic hyperspectral segmentation pipeline: raw-frame
//! preprocessing, overlapping patch tiling, a compact encoder-decoder FCN
//! with float and int8 inference, evaluation metrics, spectral statistics
//! and a latency harness.

// `!(x > 0.0)` is used on purpose to reject NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bench;
pub mod cube;
pub mod error;
pub mod infer;
pub mod io;
pub mod metrics;
pub mod mosaic;
pub mod parallel;
pub mod patchwork;
pub mod pipeline;
pub mod quant;
pub mod spectra;
pub mod synth;
pub mod tensor;

pub use cube::{HsiCube, LabelMask, Plane, IGNORE_LABEL};
pub use error::{Error, Result};
pub use tensor::{FeatureMap, Tensor};
