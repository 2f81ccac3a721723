//! Int8 model container (`.sdq`): a one-line JSON manifest with the folded
//! graph, per-layer activation schemes and a tensor table carrying each
//! tensor's `{scale, zero_point, dtype}`, followed by the payload
//! (`i8`, `i32le` or `f32le`) in table order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::graph::ModelGraph;
use crate::io::{f32s_to_le, le_to_f32s, read_framed, write_framed};
use crate::quant::qgraph::{QBias, QTensor, QuantGraph};
use crate::quant::scheme::QuantScheme;
use crate::tensor::Tensor;

pub const QUANT_FORMAT: &str = "specdrive-qweights";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub scale: f64,
    pub zero_point: i32,
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    graph: ModelGraph,
    schemes: Vec<Option<QuantScheme>>,
    fused_relu: Vec<bool>,
    tensors: Vec<QTensorEntry>,
}

pub fn save_quantized(path: &Path, q: &QuantGraph) -> Result<()> {
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    let mut entry = |name: &str, shape: Vec<usize>, dtype: &str, scale: f64, zp: i32, bytes: Vec<u8>| {
        tensors.push(QTensorEntry {
            name: name.to_string(),
            shape,
            dtype: dtype.into(),
            scale,
            zero_point: zp,
            offset: payload.len(),
        });
        payload.extend(bytes);
    };
    for (name, t) in &q.weights {
        let bytes = t.data.iter().map(|&v| v as u8).collect();
        entry(name, t.shape.clone(), "i8", t.scheme.scale as f64, t.scheme.zero_point, bytes);
    }
    for (name, b) in &q.biases {
        let bytes = b.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        entry(name, vec![b.data.len()], "i32le", b.scale, 0, bytes);
    }
    for (name, t) in &q.floats {
        entry(name, t.shape.clone(), "f32le", 1.0, 0, f32s_to_le(&t.data));
    }
    let manifest = Manifest {
        format: QUANT_FORMAT.into(),
        version: 1,
        graph: q.graph.clone(),
        schemes: q.schemes.clone(),
        fused_relu: q.fused_relu.clone(),
        tensors,
    };
    write_framed(path, &manifest, &payload)
}

pub fn load_quantized(path: &Path) -> Result<QuantGraph> {
    let (m, payload): (Manifest, Vec<u8>) = read_framed(path)?;
    if m.format != QUANT_FORMAT {
        return Err(Error::corrupt(path, format!("not an int8 container (format `{}`)", m.format)));
    }
    m.graph.validate().map_err(|e| Error::corrupt(path, e.to_string()))?;
    let n = m.graph.layers.len();
    if m.schemes.len() != n || m.fused_relu.len() != n || m.schemes.first().copied().flatten().is_none() {
        return Err(Error::corrupt(path, "scheme table does not match the graph"));
    }
    let mut weights = BTreeMap::new();
    let mut biases = BTreeMap::new();
    let mut floats = BTreeMap::new();
    let mut expected = 0;
    for e in &m.tensors {
        let count: usize = e.shape.iter().product();
        let width = match e.dtype.as_str() {
            "i8" => 1,
            "i32le" | "f32le" => 4,
            other => return Err(Error::corrupt(path, format!("`{}` has dtype {other}", e.name))),
        };
        let end = e.offset + width * count;
        if e.offset != expected || end > payload.len() {
            return Err(Error::corrupt(path, format!("tensor `{}` runs past the payload", e.name)));
        }
        expected = end;
        let bytes = &payload[e.offset..end];
        match e.dtype.as_str() {
            "i8" => {
                let scheme = QuantScheme { scale: e.scale as f32, zero_point: e.zero_point };
                let data = bytes.iter().map(|&b| b as i8).collect();
                weights.insert(e.name.clone(), QTensor { shape: e.shape.clone(), data, scheme });
            }
            "i32le" => {
                let data = bytes.chunks_exact(4).map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
                biases.insert(e.name.clone(), QBias { data, scale: e.scale });
            }
            _ => {
                floats.insert(e.name.clone(), Tensor::new(e.shape.clone(), le_to_f32s(bytes))?);
            }
        }
    }
    if expected != payload.len() {
        return Err(Error::corrupt(path, "trailing bytes after last tensor"));
    }
    for l in &m.graph.layers {
        if l.kind.is_linear() {
            for p in ["weight", "bias"] {
                let name = format!("{}.{p}", l.name);
                if !weights.contains_key(&name) && !biases.contains_key(&name) {
                    return Err(Error::MissingWeights(name));
                }
            }
        }
    }
    Ok(QuantGraph { graph: m.graph, schemes: m.schemes, fused_relu: m.fused_relu, weights, biases, floats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infer::graph::build_mlp;
    use crate::infer::weights::random_weights;
    use crate::quant::{calibrate, qforward, quantize_graph};
    use crate::tensor::FeatureMap;

    #[test]
    fn round_trip_preserves_outputs() {
        let g = build_mlp(25, 4).unwrap();
        let w = random_weights(&g, 3);
        let x = FeatureMap::new(2, 3, 25, (0..150).map(|i| (i % 11) as f32 / 10.0).collect()).unwrap();
        let q = quantize_graph(&g, &w, &calibrate(&g, &w, std::slice::from_ref(&x)).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.sdq");
        save_quantized(&p, &q).unwrap();
        let back = load_quantized(&p).unwrap();
        assert_eq!(back, q);
        assert_eq!(qforward(&back, &x).unwrap(), qforward(&q, &x).unwrap());

        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_quantized(&p), Err(Error::CorruptContainer { .. })));
    }
}
