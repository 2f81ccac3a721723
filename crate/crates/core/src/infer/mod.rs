//! Model graphs, float inference and complexity accounting.

pub mod complexity;
pub mod container;
pub mod fold;
pub mod forward;
pub mod graph;
pub mod kernels;
pub mod weights;

pub use complexity::{count_flops, count_macs, count_params, ComplexityReport, ParamCount};
pub use container::{load_weights, save_weights, FloatModel};
pub use fold::fold_batchnorm;
pub use forward::{forward, forward_all, forward_with, KernelSet};
pub use graph::{build_mlp, build_unet, Architecture, Layer, LayerKind, ModelGraph, UNetConfig};
pub use weights::{random_weights, Weights};
