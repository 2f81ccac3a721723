//! Parameter and operation counts.
//!
//! Conventions:
//! - conv, up-conv and dense layers count `weights + bias`;
//! - batch-norm counts `2 * ch` trainable (scale, offset) and `2 * ch`
//!   non-trainable (moving mean and variance);
//! - normalization layers are parameter-free;
//! - MACs are `H_out * W_out * C_out * C_in * k^2` for every linear layer at
//!   its output resolution (`k = 1` for dense), and FLOPs are `2 * MACs`.
//!   Activations, batch-norm, pooling and softmax are not counted.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::infer::graph::{LayerKind, ModelGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub params: u64,
    pub trainable: u64,
    pub non_trainable: u64,
    pub macs_per_patch: u64,
    pub flops_per_patch: u64,
    pub patches_per_image: u64,
    pub flops_per_image: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParamCount {
    pub total: u64,
    pub trainable: u64,
    pub non_trainable: u64,
}

pub fn count_params(graph: &ModelGraph) -> ParamCount {
    let mut c = ParamCount::default();
    for spec in graph.param_specs().into_iter().filter(|s| s.counted) {
        let n: u64 = spec.shape.iter().product::<usize>() as u64;
        c.total += n;
        if spec.trainable {
            c.trainable += n;
        } else {
            c.non_trainable += n;
        }
    }
    c
}

/// Multiply-accumulates of one forward pass at the graph's input shape.
pub fn count_macs(graph: &ModelGraph) -> Result<u64> {
    let shapes = graph.infer_shapes(graph.input_shape)?;
    let mut macs = 0u64;
    for (l, &(h, w, _)) in graph.layers.iter().zip(&shapes) {
        let taps = match l.kind {
            LayerKind::Conv { kernel } => kernel * kernel,
            LayerKind::UpConv2 => 4,
            LayerKind::Dense => 1,
            _ => continue,
        };
        macs += (h * w * l.out_ch * l.in_ch * taps) as u64;
    }
    Ok(macs)
}

/// Full report. `patches_per_image` is the number of forward passes needed
/// per image (18 patches for the FCN, one per pixel for the MLP).
pub fn count_flops(graph: &ModelGraph, patches_per_image: u64) -> Result<ComplexityReport> {
    let p = count_params(graph);
    let macs = count_macs(graph)?;
    let flops = 2 * macs;
    Ok(ComplexityReport {
        params: p.total,
        trainable: p.trainable,
        non_trainable: p.non_trainable,
        macs_per_patch: macs,
        flops_per_patch: flops,
        patches_per_image,
        flops_per_image: flops * patches_per_image,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infer::graph::{build_mlp, build_unet, UNetConfig};

    /// Independent closed-form count for the encoder-decoder layout.
    fn unet_params_closed_form(ed: usize, f: usize, ic: usize, c: usize, k: usize) -> (u64, u64) {
        let conv = |i: usize, o: usize| (o * i * k * k + o) as u64;
        let bn = |o: usize| (4 * o) as u64;
        let mut total = 0;
        let mut nt = 0;
        let mut prev = ic;
        for lvl in 0..=ed {
            let o = f << lvl;
            total += conv(prev, o) + conv(o, o) + 2 * bn(o);
            nt += 2 * 2 * o as u64;
            prev = o;
        }
        for lvl in (0..ed).rev() {
            let o = f << lvl;
            total += (prev * o * 4 + o) as u64; // up-conv
            total += conv(2 * o, o) + conv(o, o) + 2 * bn(o);
            nt += 2 * 2 * o as u64;
            prev = o;
        }
        total += (prev * c + c) as u64;
        (total, nt)
    }

    #[test]
    fn unet_reference_counts() {
        let g = build_unet(&UNetConfig::default()).unwrap();
        let p = count_params(&g);
        assert_eq!(p.total, 31_707);
        assert_eq!(p.non_trainable, 320);
        assert_eq!(p.trainable + p.non_trainable, p.total);
        assert_eq!(count_params(&build_unet(&UNetConfig::with_classes(5)).unwrap()).total, 31_725);
    }

    #[test]
    fn unet_counts_match_closed_form_over_grid() {
        for ed in 1..=4 {
            for f in [4, 8, 16, 32] {
                for c in [3, 5, 10] {
                    let cfg = UNetConfig { encoder_depth: ed, initial_filters: f, classes: c, ..Default::default() };
                    let p = count_params(&build_unet(&cfg).unwrap());
                    assert_eq!((p.total, p.non_trainable), unet_params_closed_form(ed, f, 25, c, 3));
                }
            }
        }
    }

    #[test]
    fn mlp_counts() {
        let g = build_mlp(25, 3).unwrap();
        let p = count_params(&g);
        assert_eq!(p.total, 13_653);
        assert_eq!(p.non_trainable, 0);
        assert_eq!(count_macs(&g).unwrap(), 13_425);
    }

    #[test]
    fn unet_flops() {
        let g = build_unet(&UNetConfig::default()).unwrap();
        let r = count_flops(&g, 18).unwrap();
        assert_eq!(r.macs_per_patch, 141_033_472);
        assert_eq!(r.flops_per_patch, 282_066_944);
        assert_eq!(r.flops_per_image, 18 * r.flops_per_patch);
    }
}
