//! Float weight container (`.sdw`): a one-line JSON manifest carrying the
//! graph and a tensor table, followed by the concatenated little-endian
//! `f32` tensors in table order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::graph::ModelGraph;
use crate::infer::weights::Weights;
use crate::io::{f32s_to_le, le_to_f32s, read_framed, write_framed};
use crate::tensor::Tensor;

pub const WEIGHTS_FORMAT: &str = "specdrive-weights";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    graph: ModelGraph,
    tensors: Vec<TensorEntry>,
}

/// A graph together with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatModel {
    pub graph: ModelGraph,
    pub weights: Weights,
}

pub fn save_weights(path: &Path, graph: &ModelGraph, weights: &Weights) -> Result<()> {
    weights.check(graph)?;
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    // graph order keeps the layout stable and readable
    for spec in graph.param_specs() {
        let t = weights.get(&spec.name)?;
        tensors.push(TensorEntry {
            name: spec.name.clone(),
            shape: t.shape.clone(),
            dtype: "f32le".into(),
            offset: payload.len(),
        });
        payload.extend(f32s_to_le(&t.data));
    }
    let manifest = Manifest { format: WEIGHTS_FORMAT.into(), version: 1, graph: graph.clone(), tensors };
    write_framed(path, &manifest, &payload)
}

pub fn load_weights(path: &Path) -> Result<FloatModel> {
    let (m, payload): (Manifest, Vec<u8>) = read_framed(path)?;
    if m.format != WEIGHTS_FORMAT {
        return Err(Error::corrupt(path, format!("not a weight container (format `{}`)", m.format)));
    }
    m.graph.validate().map_err(|e| Error::corrupt(path, e.to_string()))?;
    let mut weights = Weights::new();
    let mut expected_end = 0;
    for e in &m.tensors {
        if e.dtype != "f32le" {
            return Err(Error::corrupt(path, format!("`{}` has dtype {}", e.name, e.dtype)));
        }
        let n: usize = e.shape.iter().product();
        let end = e.offset + 4 * n;
        if e.offset != expected_end || end > payload.len() {
            return Err(Error::corrupt(path, format!("tensor `{}` runs past the payload", e.name)));
        }
        expected_end = end;
        weights.insert(e.name.clone(), Tensor::new(e.shape.clone(), le_to_f32s(&payload[e.offset..end]))?);
    }
    if expected_end != payload.len() {
        return Err(Error::corrupt(path, "trailing bytes after last tensor"));
    }
    weights.check(&m.graph).map_err(|e| Error::corrupt(path, e.to_string()))?;
    Ok(FloatModel { graph: m.graph, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infer::graph::build_mlp;
    use crate::infer::weights::random_weights;

    #[test]
    fn round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.sdw");
        let g = build_mlp(25, 3).unwrap();
        let w = random_weights(&g, 4);
        save_weights(&p, &g, &w).unwrap();
        let m = load_weights(&p).unwrap();
        assert_eq!(m.graph, g);
        assert_eq!(m.weights, w);

        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(load_weights(&p), Err(Error::CorruptContainer { .. })));
        std::fs::write(&p, &bytes[..20]).unwrap();
        assert!(matches!(load_weights(&p), Err(Error::CorruptContainer { .. })));
    }
}
