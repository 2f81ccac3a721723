//! Activation range calibration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::fold::fold_batchnorm;
use crate::infer::forward::{evaluate, KernelSet};
use crate::infer::graph::ModelGraph;
use crate::infer::weights::Weights;
use crate::tensor::FeatureMap;

/// Observed `(min, max)` of every layer output of the batch-norm-folded
/// graph, keyed by layer name. The input range is stored under `input`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActivationRanges {
    pub ranges: BTreeMap<String, (f32, f32)>,
}

impl ActivationRanges {
    pub fn get(&self, name: &str) -> Result<(f32, f32)> {
        self.ranges.get(name).copied().ok_or_else(|| Error::RangeMissing(name.to_string()))
    }

    /// Union of two range sets.
    pub fn merge(&mut self, other: &ActivationRanges) {
        for (k, &(lo, hi)) in &other.ranges {
            let e = self.ranges.entry(k.clone()).or_insert((lo, hi));
            e.0 = e.0.min(lo);
            e.1 = e.1.max(hi);
        }
    }
}

/// Runs the float model over every sample and records running min/max.
/// Batch-norm is folded first so the recorded names match the layers that
/// [`quantize_graph`](crate::quant::quantize_graph) sees.
pub fn calibrate(graph: &ModelGraph, weights: &Weights, samples: &[FeatureMap]) -> Result<ActivationRanges> {
    if samples.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let (fg, fw) = fold_batchnorm(graph, weights)?;
    let n = fg.layers.len();
    let mut lo = vec![f32::INFINITY; n];
    let mut hi = vec![f32::NEG_INFINITY; n];
    for s in samples {
        evaluate(&fg, &fw, s, KernelSet::Optimized, false, |i, out| {
            for &v in &out.data {
                if v < lo[i] {
                    lo[i] = v;
                }
                if v > hi[i] {
                    hi[i] = v;
                }
            }
        })?;
    }
    let ranges = fg
        .layers
        .iter()
        .enumerate()
        .filter(|(i, _)| lo[*i] <= hi[*i])
        .map(|(i, l)| (l.name.clone(), (lo[i], hi[i])))
        .collect();
    Ok(ActivationRanges { ranges })
}
