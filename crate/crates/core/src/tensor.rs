//! Channels-last feature maps and flat weight tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `h x w x c` activation map, channels-last (`data[(y * w + x) * c + ch]`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w * c {
            return Err(Error::ShapeMismatch(format!(
                "feature map {h}x{w}x{c} needs {} values, got {}",
                h * w * c,
                data.len()
            )));
        }
        Ok(FeatureMap { h, w, c, data })
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        FeatureMap { h, w, c, data: vec![0.0; h * w * c] }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, ch: usize) -> f32 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, ch: usize, v: f32) {
        self.data[(y * self.w + x) * self.c + ch] = v;
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.w + x) * self.c;
        &self.data[i..i + self.c]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.c)
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> FeatureMap {
        let mut data = Vec::with_capacity(h * w * self.c);
        for y in y0..y0 + h {
            let start = (y * self.w + x0) * self.c;
            data.extend_from_slice(&self.data[start..start + w * self.c]);
        }
        FeatureMap { h, w, c: self.c, data }
    }

    /// Per-pixel argmax over channels, ties to the lowest index.
    pub fn argmax_labels(&self) -> Vec<u8> {
        self.pixels().map(|p| crate::patchwork::argmax(p) as u8).collect()
    }

    pub fn max_abs_diff(&self, other: &FeatureMap) -> f32 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max)
    }
}

/// A named dense tensor of 32-bit reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!("tensor {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn filled(shape: Vec<usize>, v: f32) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![v; n] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}
