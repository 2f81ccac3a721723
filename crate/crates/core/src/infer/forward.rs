//! Float inference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::graph::{LayerKind, ModelGraph};
use crate::infer::kernels::{self, reference};
use crate::infer::weights::Weights;
use crate::tensor::FeatureMap;

pub const BN_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelSet {
    /// Single-threaded loop nests.
    Reference,
    #[default]
    Optimized,
}

fn map_pixels(input: &FeatureMap, out_c: usize, f: impl Fn(&[f32], &mut [f32]) + Sync) -> FeatureMap {
    let mut out = FeatureMap::zeros(input.h, input.w, out_c);
    out.data.par_chunks_mut(out_c).zip(input.data.par_chunks(input.c)).for_each(|(dst, src)| f(src, dst));
    out
}

pub fn band_norm(px: &[f32], out: &mut [f32]) {
    let s: f32 = px.iter().sum();
    if s > 0.0 {
        for (o, &x) in out.iter_mut().zip(px) {
            *o = x / s;
        }
    } else {
        out.fill(0.0);
    }
}

pub fn softmax(px: &[f32], out: &mut [f32]) {
    let m = px.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut s = 0.0;
    for (o, &x) in out.iter_mut().zip(px) {
        *o = (x - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

fn concat(a: &FeatureMap, b: &FeatureMap) -> FeatureMap {
    let c = a.c + b.c;
    let mut out = FeatureMap::zeros(a.h, a.w, c);
    for ((dst, pa), pb) in out.data.chunks_exact_mut(c).zip(a.pixels()).zip(b.pixels()) {
        dst[..a.c].copy_from_slice(pa);
        dst[a.c..].copy_from_slice(pb);
    }
    out
}

/// Evaluates one layer given its input maps.
pub fn eval_layer(
    graph: &ModelGraph,
    idx: usize,
    inputs: &[&FeatureMap],
    weights: &Weights,
    kernels: KernelSet,
) -> Result<FeatureMap> {
    let layer = &graph.layers[idx];
    let name = layer.name.as_str();
    let x = inputs[0];
    let (ci, co) = (layer.in_ch, layer.out_ch);
    let reference = kernels == KernelSet::Reference;
    Ok(match layer.kind {
        LayerKind::Input => x.clone(),
        LayerKind::BandNorm => map_pixels(x, co, band_norm),
        LayerKind::ZScore => {
            let mean = weights.param(name, "mean", &[co])?;
            let std = weights.param(name, "std", &[co])?;
            map_pixels(x, co, |p, o| {
                for i in 0..co {
                    o[i] = (p[i] - mean[i]) / std[i];
                }
            })
        }
        LayerKind::Conv { kernel: k } => {
            let w = weights.param(name, "weight", &[co, k, k, ci])?;
            let b = weights.param(name, "bias", &[co])?;
            if reference {
                reference::conv2d(x, w, b, k)
            } else {
                kernels::conv2d(x, w, b, k)
            }
        }
        LayerKind::UpConv2 => {
            let w = weights.param(name, "weight", &[co, 2, 2, ci])?;
            let b = weights.param(name, "bias", &[co])?;
            if reference {
                reference::upconv2(x, w, b)
            } else {
                kernels::upconv2(x, w, b)
            }
        }
        LayerKind::Dense => {
            let w = weights.param(name, "weight", &[co, ci])?;
            let b = weights.param(name, "bias", &[co])?;
            if reference {
                reference::dense(x, w, b)
            } else {
                kernels::dense(x, w, b)
            }
        }
        LayerKind::MaxPool2 => {
            if reference {
                reference::maxpool2(x)
            } else {
                kernels::maxpool2(x)
            }
        }
        LayerKind::BatchNorm => {
            let gamma = weights.param(name, "gamma", &[co])?;
            let beta = weights.param(name, "beta", &[co])?;
            let mean = weights.param(name, "mean", &[co])?;
            let var = weights.param(name, "var", &[co])?;
            let scale: Vec<f32> = gamma.iter().zip(var).map(|(g, v)| g / (v + BN_EPS).sqrt()).collect();
            map_pixels(x, co, |p, o| {
                for i in 0..co {
                    o[i] = (p[i] - mean[i]) * scale[i] + beta[i];
                }
            })
        }
        LayerKind::Relu => map_pixels(x, co, |p, o| {
            for (d, &v) in o.iter_mut().zip(p) {
                *d = v.max(0.0);
            }
        }),
        LayerKind::Tanh => map_pixels(x, co, |p, o| {
            for (d, &v) in o.iter_mut().zip(p) {
                *d = v.tanh();
            }
        }),
        LayerKind::Dropout { .. } => x.clone(),
        LayerKind::Concat => concat(inputs[0], inputs[1]),
        LayerKind::Softmax => map_pixels(x, co, softmax),
    })
}

/// Runs the graph, calling `observe(layer, output)` for every layer in
/// order. Intermediate maps are dropped once their last consumer has run
/// unless `keep` is set, in which case all outputs are returned.
pub fn evaluate(
    graph: &ModelGraph,
    weights: &Weights,
    input: &FeatureMap,
    kernels: KernelSet,
    keep: bool,
    mut observe: impl FnMut(usize, &FeatureMap),
) -> Result<Vec<Option<FeatureMap>>> {
    graph.check_input(input.shape())?;
    let consumers = graph.consumers();
    let mut remaining: Vec<usize> = consumers.iter().map(Vec::len).collect();
    let mut outputs: Vec<Option<FeatureMap>> = vec![None; graph.layers.len()];
    for idx in 0..graph.layers.len() {
        let layer = &graph.layers[idx];
        let out = if idx == 0 {
            input.clone()
        } else {
            let ins: Vec<&FeatureMap> = layer
                .inputs
                .iter()
                .map(|&i| {
                    outputs[i].as_ref().ok_or_else(|| Error::Structure(format!("output of layer {i} released early")))
                })
                .collect::<Result<_>>()?;
            eval_layer(graph, idx, &ins, weights, kernels)?
        };
        observe(idx, &out);
        outputs[idx] = Some(out);
        if !keep {
            for &i in &layer.inputs {
                remaining[i] -= 1;
                if remaining[i] == 0 {
                    outputs[i] = None;
                }
            }
        }
    }
    Ok(outputs)
}

/// All layer outputs, input included.
pub fn forward_all(
    graph: &ModelGraph,
    weights: &Weights,
    input: &FeatureMap,
    kernels: KernelSet,
) -> Result<Vec<FeatureMap>> {
    Ok(evaluate(graph, weights, input, kernels, true, |_, _| {})?.into_iter().map(|o| o.expect("kept")).collect())
}

/// Output of the final layer (class probabilities for the built models).
pub fn forward_with(
    graph: &ModelGraph,
    weights: &Weights,
    input: &FeatureMap,
    kernels: KernelSet,
) -> Result<FeatureMap> {
    let mut outs = evaluate(graph, weights, input, kernels, false, |_, _| {})?;
    Ok(outs.pop().flatten().expect("final output retained"))
}

pub fn forward(graph: &ModelGraph, weights: &Weights, input: &FeatureMap) -> Result<FeatureMap> {
    forward_with(graph, weights, input, KernelSet::Optimized)
}
