//! Post-training int8 quantization.

pub mod calibrate;
pub mod container;
pub mod qgraph;
pub mod report;
pub mod scheme;

pub use calibrate::{calibrate, ActivationRanges};
pub use container::{load_quantized, save_quantized};
pub use qgraph::{qevaluate, qforward, quantize_graph, QMap, QValue, QuantGraph};
pub use report::{quant_report, size_report, LayerError, QuantReport, SizeReport};
pub use scheme::{QuantScheme, Requantizer};
