//! Raster containers shared by every stage: single-channel planes, the
//! band-major hyperspectral cube and 8-bit label masks.

use crate::error::{Error, Result};

/// A single-channel row-major raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Plane<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "plane {width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Plane { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Plane { width, height, data: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Plane { width, height, data }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[T] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    pub fn same_dims<U>(&self, other: &Plane<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Reflectance cube stored as `bands` contiguous row-major planes.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub data: Vec<f32>,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * bands {
            return Err(Error::DimensionMismatch(format!(
                "cube {height}x{width}x{bands} needs {} values, got {}",
                height * width * bands,
                data.len()
            )));
        }
        Ok(HsiCube { height, width, bands, data })
    }

    pub fn zeros(height: usize, width: usize, bands: usize) -> Self {
        HsiCube { height, width, bands, data: vec![0.0; height * width * bands] }
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, band: usize) -> f32 {
        self.data[band * self.plane_len() + row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, band: usize, value: f32) {
        let n = self.plane_len();
        self.data[band * n + row * self.width + col] = value;
    }

    pub fn band(&self, band: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[band * n..(band + 1) * n]
    }

    pub fn band_mut(&mut self, band: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[band * n..(band + 1) * n]
    }

    /// Spectrum of one pixel, in band order.
    pub fn spectrum(&self, row: usize, col: usize) -> Vec<f32> {
        (0..self.bands).map(|b| self.get(row, col, b)).collect()
    }

    /// Count of values outside `[0, 1]` (NaN counts as outside).
    pub fn out_of_range(&self) -> usize {
        self.data.iter().filter(|v| !(0.0..=1.0).contains(*v)).count()
    }
}

/// Per-pixel class indices. `255` marks unlabelled pixels by convention.
pub type LabelMask = Plane<u8>;

pub const IGNORE_LABEL: u8 = 255;
