use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::infer::graph::{LayerKind, ModelGraph};
use crate::tensor::Tensor;

/// Named tensors keyed `"<layer>.<param>"`, e.g. `enc0.conv0.weight`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Weights {
    pub tensors: BTreeMap<String, Tensor>,
}

impl Weights {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::MissingWeights(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors.get_mut(name).ok_or_else(|| Error::MissingWeights(name.to_string()))
    }

    /// Looks up `"<layer>.<param>"` and checks its shape.
    pub fn param(&self, layer: &str, param: &str, shape: &[usize]) -> Result<&[f32]> {
        let name = format!("{layer}.{param}");
        let t = self.get(&name)?;
        if t.shape != shape {
            return Err(Error::ShapeMismatch(format!("`{name}` has shape {:?}, expected {shape:?}", t.shape)));
        }
        Ok(&t.data)
    }

    /// Verifies every tensor the graph needs is present with the right shape.
    pub fn check(&self, graph: &ModelGraph) -> Result<()> {
        for spec in graph.param_specs() {
            let t = self.get(&spec.name)?;
            if t.shape != spec.shape {
                return Err(Error::ShapeMismatch(format!(
                    "`{}` has shape {:?}, expected {:?}",
                    spec.name, t.shape, spec.shape
                )));
            }
        }
        Ok(())
    }

    /// Total number of stored scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }
}

/// Seeded He-style initialization: linear weights ~ N(0, 2 / fan_in), small
/// uniform biases, batch-norm statistics near identity and unit z-score.
pub fn random_weights(graph: &ModelGraph, seed: u64) -> Weights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Weights::new();
    for layer in &graph.layers {
        let fan_in = match layer.kind {
            LayerKind::Conv { kernel } => kernel * kernel * layer.in_ch,
            LayerKind::UpConv2 => layer.in_ch,
            LayerKind::Dense => layer.in_ch,
            _ => 0,
        };
        for spec in layer.params() {
            let n: usize = spec.shape.iter().product();
            let suffix = spec.name.rsplit('.').next().unwrap_or_default();
            let data: Vec<f32> = match (suffix, &layer.kind) {
                ("weight", _) => {
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
                    (0..n).map(|_| normal.sample(&mut rng) as f32).collect()
                }
                ("bias", _) => (0..n).map(|_| rng.random_range(-0.05..0.05)).collect(),
                ("gamma", _) => (0..n).map(|_| rng.random_range(0.8..1.2)).collect(),
                ("beta", _) => (0..n).map(|_| rng.random_range(-0.1..0.1)).collect(),
                ("mean", LayerKind::BatchNorm) => (0..n).map(|_| rng.random_range(-0.1..0.1)).collect(),
                ("var", _) => (0..n).map(|_| rng.random_range(0.5..1.5)).collect(),
                ("mean", _) => vec![0.0; n],
                ("std", _) => vec![1.0; n],
                _ => vec![0.0; n],
            };
            w.insert(spec.name.clone(), Tensor { shape: spec.shape.clone(), data });
        }
    }
    w
}
