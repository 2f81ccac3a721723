//! Size and accuracy comparison between a float model and its int8 form.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::infer::complexity::count_params;
use crate::infer::fold::fold_batchnorm;
use crate::infer::forward::{evaluate, KernelSet};
use crate::infer::graph::ModelGraph;
use crate::infer::weights::Weights;
use crate::quant::qgraph::{qevaluate, QuantGraph};
use crate::tensor::FeatureMap;

/// Bytes stored per scheme (`f32` scale and `i32` zero point).
const SCHEME_BYTES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    /// 4 bytes per counted float parameter, batch-norm included.
    pub float_bytes: usize,
    /// int8 weights, int32 biases and any real constants.
    pub quantized_bytes: usize,
    /// Scales and zero points.
    pub metadata_bytes: usize,
    pub ratio: f64,
}

pub fn size_report(float_graph: &ModelGraph, q: &QuantGraph) -> SizeReport {
    let float_bytes = 4 * count_params(float_graph).total as usize;
    let (w8, b32, f32s) = q.payload_counts();
    let quantized_bytes = w8 + 4 * b32 + 4 * f32s;
    let schemes = q.schemes.iter().flatten().count() + q.weights.len();
    SizeReport {
        float_bytes,
        quantized_bytes,
        metadata_bytes: schemes * SCHEME_BYTES + q.biases.len() * 8,
        ratio: quantized_bytes as f64 / float_bytes as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerError {
    pub name: String,
    pub op: String,
    pub max_abs: f32,
    pub mean_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantReport {
    pub size: SizeReport,
    pub layers: Vec<LayerError>,
    /// Fraction of probe pixels where float and int8 argmax agree.
    pub argmax_agreement: f64,
    pub pixels: u64,
}

/// Runs both models on every probe and compares all layer outputs.
pub fn quant_report(
    graph: &ModelGraph,
    weights: &Weights,
    q: &QuantGraph,
    probes: &[FeatureMap],
) -> Result<QuantReport> {
    let (fg, fw) = fold_batchnorm(graph, weights)?;
    let n = q.graph.layers.len();
    let mut max_abs = vec![0f32; n];
    let mut sum_abs = vec![0f64; n];
    let mut count = vec![0u64; n];
    let mut agree = 0u64;
    let mut pixels = 0u64;
    for x in probes {
        let floats: Vec<FeatureMap> = evaluate(&fg, &fw, x, KernelSet::Optimized, true, |_, _| {})?
            .into_iter()
            .map(|o| o.expect("kept"))
            .collect();
        let mut final_q = None;
        qevaluate(q, x, false, |i, v| {
            let r = v.to_real();
            for (a, b) in r.data.iter().zip(&floats[i].data) {
                let d = (a - b).abs();
                max_abs[i] = max_abs[i].max(d);
                sum_abs[i] += d as f64;
            }
            count[i] += r.data.len() as u64;
            if i == n - 1 {
                final_q = Some(r);
            }
        })?;
        let fq = final_q.expect("final layer observed");
        let fl = &floats[n - 1];
        for (a, b) in fq.argmax_labels().iter().zip(fl.argmax_labels()) {
            agree += (*a == b) as u64;
            pixels += 1;
        }
    }
    let layers = q
        .graph
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| LayerError {
            name: l.name.clone(),
            op: l.kind.short_name().to_string(),
            max_abs: max_abs[i],
            mean_abs: if count[i] > 0 { sum_abs[i] / count[i] as f64 } else { 0.0 },
        })
        .collect();
    Ok(QuantReport {
        size: size_report(graph, q),
        layers,
        argmax_agreement: if pixels > 0 { agree as f64 / pixels as f64 } else { 1.0 },
        pixels,
    })
}
