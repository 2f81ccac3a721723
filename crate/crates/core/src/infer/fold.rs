//! Batch-norm folding into the preceding convolution.

use crate::error::{Error, Result};
use crate::infer::forward::BN_EPS;
use crate::infer::graph::{Architecture, Layer, LayerKind, ModelGraph};
use crate::infer::weights::Weights;
use crate::tensor::Tensor;

/// Removes every batch-norm layer by rescaling the conv it follows:
/// `w' = w * s`, `b' = (b - mean) * s + beta` with `s = gamma / sqrt(var + eps)`
/// per output channel. Each batch-norm must be the sole consumer of a conv
/// or up-conv output. Graphs without batch-norm are returned unchanged.
pub fn fold_batchnorm(graph: &ModelGraph, weights: &Weights) -> Result<(ModelGraph, Weights)> {
    let consumers = graph.consumers();
    let mut out_w = weights.clone();
    // new index of every old layer (a folded BN maps to its conv)
    let mut remap = vec![usize::MAX; graph.layers.len()];
    let mut layers: Vec<Layer> = Vec::with_capacity(graph.layers.len());

    for (idx, layer) in graph.layers.iter().enumerate() {
        if layer.kind != LayerKind::BatchNorm {
            let mut l = layer.clone();
            l.inputs = layer.inputs.iter().map(|&i| remap[i]).collect();
            remap[idx] = layers.len();
            layers.push(l);
            continue;
        }
        let src = layer.inputs[0];
        let conv = &graph.layers[src];
        if !matches!(conv.kind, LayerKind::Conv { .. } | LayerKind::UpConv2) {
            return Err(Error::Structure(format!(
                "batch-norm `{}` follows `{}` ({}), not a convolution",
                layer.name,
                conv.name,
                conv.kind.short_name()
            )));
        }
        if consumers[src].len() != 1 {
            return Err(Error::Structure(format!(
                "conv `{}` feeds more than the batch-norm `{}`",
                conv.name, layer.name
            )));
        }
        let ch = layer.out_ch;
        let gamma = weights.param(&layer.name, "gamma", &[ch])?;
        let beta = weights.param(&layer.name, "beta", &[ch])?;
        let mean = weights.param(&layer.name, "mean", &[ch])?;
        let var = weights.param(&layer.name, "var", &[ch])?;
        let scale: Vec<f32> = gamma.iter().zip(var).map(|(g, v)| g / (v + BN_EPS).sqrt()).collect();

        let wname = format!("{}.weight", conv.name);
        let bname = format!("{}.bias", conv.name);
        let w: &mut Tensor = out_w.get_mut(&wname)?;
        let per_out = w.len() / ch;
        for (o, chunk) in w.data.chunks_exact_mut(per_out).enumerate() {
            for v in chunk {
                *v *= scale[o];
            }
        }
        let b = out_w.get_mut(&bname)?;
        for o in 0..ch {
            b.data[o] = (b.data[o] - mean[o]) * scale[o] + beta[o];
        }
        for p in ["gamma", "beta", "mean", "var"] {
            out_w.tensors.remove(&format!("{}.{p}", layer.name));
        }
        remap[idx] = remap[src];
    }

    let architecture =
        if layers.len() == graph.layers.len() { graph.architecture.clone() } else { Architecture::Custom };
    let folded = ModelGraph { architecture, input_shape: graph.input_shape, layers };
    folded.validate()?;
    Ok((folded, out_w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infer::complexity::count_params;
    use crate::infer::forward::forward;
    use crate::infer::graph::{build_unet, GraphBuilder, UNetConfig};
    use crate::infer::weights::random_weights;
    use crate::tensor::FeatureMap;

    fn conv_bn() -> ModelGraph {
        let mut g = GraphBuilder::new(3);
        g.push("c", LayerKind::Conv { kernel: 3 }, 0, 4);
        g.then("bn", LayerKind::BatchNorm);
        g.finish(Architecture::Custom, (6, 6, 3)).unwrap()
    }

    #[test]
    fn identity_bn_leaves_weights() {
        let g = conv_bn();
        let mut w = random_weights(&g, 1);
        w.insert("bn.gamma", Tensor::filled(vec![4], 1.0));
        w.insert("bn.beta", Tensor::zeros(vec![4]));
        w.insert("bn.mean", Tensor::zeros(vec![4]));
        w.insert("bn.var", Tensor::filled(vec![4], 1.0 - BN_EPS));
        let (fg, fw) = fold_batchnorm(&g, &w).unwrap();
        assert_eq!(fg.layers.len(), 2);
        assert_eq!(fw.get("c.weight").unwrap(), w.get("c.weight").unwrap());
        assert_eq!(fw.get("c.bias").unwrap(), w.get("c.bias").unwrap());
    }

    #[test]
    fn folded_unet_matches_and_drops_bn_params() {
        let cfg = UNetConfig { patch_size: 16, ..Default::default() };
        let g = build_unet(&cfg).unwrap();
        let w = random_weights(&g, 11);
        let (fg, fw) = fold_batchnorm(&g, &w).unwrap();
        assert_eq!(fg.count_kind(|k| *k == LayerKind::BatchNorm), 0);
        let before = count_params(&g);
        let bn_params = 4 * 160;
        assert_eq!(count_params(&fg).total, before.total - bn_params);
        assert_eq!(fw.scalar_count(), w.scalar_count() - bn_params as usize);

        let data = (0..16 * 16 * 25).map(|i| ((i * 7919) % 1000) as f32 / 1000.0).collect();
        let x = FeatureMap::new(16, 16, 25, data).unwrap();
        let a = forward(&g, &w, &x).unwrap();
        let b = forward(&fg, &fw, &x).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-4);
    }

    #[test]
    fn bn_after_relu_is_rejected() {
        let mut g = GraphBuilder::new(3);
        g.push("c", LayerKind::Conv { kernel: 3 }, 0, 4);
        g.then("r", LayerKind::Relu);
        g.then("bn", LayerKind::BatchNorm);
        let g = g.finish(Architecture::Custom, (6, 6, 3)).unwrap();
        let w = random_weights(&g, 1);
        assert!(matches!(fold_batchnorm(&g, &w), Err(Error::Structure(_))));
    }
}
