//! Centrosymmetric overlapping tiling of cubes and reconstruction of dense
//! probability maps from per-patch predictions.
//!
//! Reconstruction divides the additive accumulation of patch probabilities by
//! the overlap index, the per-pixel count of patches covering that pixel.

use serde::{Deserialize, Serialize};

use crate::cube::{HsiCube, LabelMask, Plane};
use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

pub const PATCH_SIZE: usize = 128;
pub const V_STRIDE: usize = 44;
pub const H_STRIDE: usize = 57;

/// Patch origins on a `height x width` image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    #[serde(rename = "patch")]
    pub patch_size: usize,
    #[serde(rename = "rows")]
    pub row_starts: Vec<usize>,
    #[serde(rename = "cols")]
    pub col_starts: Vec<usize>,
    /// `(height, width)`; optional in serialized grids, in which case it is
    /// taken from the cube being tiled.
    #[serde(rename = "image", default, skip_serializing_if = "Option::is_none")]
    pub image_size: Option<(usize, usize)>,
}

/// Starts along one axis: forward from 0 and backward from `len - patch`,
/// merged so the set is mirror-symmetric about `(len - patch) / 2`.
fn mirrored_starts(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    let span = len - patch;
    if span == 0 {
        return vec![0];
    }
    let n = span.div_ceil(stride) + 1;
    let mut starts = vec![0; n];
    for i in 0..n / 2 {
        starts[i] = i * stride;
        starts[n - 1 - i] = span - i * stride;
    }
    if n % 2 == 1 {
        starts[n / 2] = span / 2;
    }
    starts
}

impl PatchGrid {
    pub fn patch_count(&self) -> usize {
        self.row_starts.len() * self.col_starts.len()
    }

    /// Origins in row-major order over `(row_start, col_start)`.
    pub fn origins(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.row_starts.iter().flat_map(move |&r| self.col_starts.iter().map(move |&c| (r, c)))
    }

    /// Returns the image size, filling it in from `fallback` when absent.
    pub fn resolve(&self, fallback: (usize, usize)) -> Result<PatchGrid> {
        let mut g = self.clone();
        let size = *g.image_size.get_or_insert(fallback);
        if size != fallback {
            return Err(Error::InvalidGeometry(format!(
                "grid is for a {}x{} image, got {}x{}",
                size.0, size.1, fallback.0, fallback.1
            )));
        }
        g.validate()?;
        Ok(g)
    }

    pub fn image_size(&self) -> Result<(usize, usize)> {
        self.image_size.ok_or_else(|| Error::InvalidGeometry("grid has no image size".into()))
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size()?;
        let p = self.patch_size;
        let check = |starts: &[usize], len: usize, axis: &str| -> Result<()> {
            if starts.is_empty() {
                return Err(Error::InvalidGeometry(format!("no {axis} starts")));
            }
            if starts.windows(2).any(|s| s[0] >= s[1]) {
                return Err(Error::InvalidGeometry(format!("{axis} starts not ascending")));
            }
            if starts.iter().any(|&s| s + p > len) {
                return Err(Error::InvalidGeometry(format!("{axis} patch exceeds image extent {len}")));
            }
            let covered =
                starts[0] == 0 && starts.last().unwrap() + p == len && starts.windows(2).all(|s| s[1] - s[0] <= p);
            if !covered {
                return Err(Error::InvalidGeometry(format!("{axis} starts leave gaps")));
            }
            Ok(())
        };
        if p == 0 {
            return Err(Error::InvalidGeometry("patch size 0".into()));
        }
        check(&self.row_starts, h, "row")?;
        check(&self.col_starts, w, "col")
    }
}

/// Builds the overlapping grid. Both axes use mirrored striding, which
/// reduces to plain striding whenever `stride` divides `len - patch`.
pub fn build_grid(
    image_size: (usize, usize),
    patch_size: usize,
    v_stride: usize,
    h_stride: usize,
) -> Result<PatchGrid> {
    let (h, w) = image_size;
    if patch_size == 0 || patch_size > h || patch_size > w {
        return Err(Error::InvalidGeometry(format!("patch {patch_size} does not fit image {h}x{w}")));
    }
    if v_stride == 0 || h_stride == 0 {
        return Err(Error::InvalidGeometry("strides must be positive".into()));
    }
    if v_stride > patch_size || h_stride > patch_size {
        return Err(Error::InvalidGeometry(format!(
            "strides ({v_stride}, {h_stride}) larger than patch {patch_size} leave gaps"
        )));
    }
    let grid = PatchGrid {
        patch_size,
        row_starts: mirrored_starts(h, patch_size, v_stride),
        col_starts: mirrored_starts(w, patch_size, h_stride),
        image_size: Some(image_size),
    };
    grid.validate()?;
    Ok(grid)
}

/// The 3x6 grid used on 216x409 cubes.
pub fn default_grid() -> PatchGrid {
    build_grid((216, 409), PATCH_SIZE, V_STRIDE, H_STRIDE).expect("default grid is valid")
}

/// Per-pixel number of covering patches.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapIndex {
    pub counts: Plane<u32>,
}

pub fn overlap_index(grid: &PatchGrid) -> Result<OverlapIndex> {
    let (h, w) = grid.image_size()?;
    let mut counts = Plane::filled(w, h, 0u32);
    let p = grid.patch_size;
    for (r0, c0) in grid.origins() {
        for r in r0..r0 + p {
            for v in &mut counts.data[r * w + c0..r * w + c0 + p] {
                *v += 1;
            }
        }
    }
    Ok(OverlapIndex { counts })
}

/// Copies each patch out of the cube in grid order, as channels-last maps.
pub fn extract_patches(cube: &HsiCube, grid: &PatchGrid) -> Result<Vec<FeatureMap>> {
    let grid = grid.resolve((cube.height, cube.width))?;
    let p = grid.patch_size;
    let bands = cube.bands;
    Ok(grid
        .origins()
        .map(|(r0, c0)| {
            let mut data = vec![0f32; p * p * bands];
            for b in 0..bands {
                let plane = cube.band(b);
                for r in 0..p {
                    let src = &plane[(r0 + r) * cube.width + c0..][..p];
                    for (c, &v) in src.iter().enumerate() {
                        data[(r * p + c) * bands + b] = v;
                    }
                }
            }
            FeatureMap { h: p, w: p, c: bands, data }
        })
        .collect())
}

/// Cuts a channels-last map into patches (used to re-tile probability maps).
pub fn extract_map_patches(map: &FeatureMap, grid: &PatchGrid) -> Result<Vec<FeatureMap>> {
    let grid = grid.resolve((map.h, map.w))?;
    let p = grid.patch_size;
    Ok(grid.origins().map(|(r0, c0)| map.crop(r0, c0, p, p)).collect())
}

/// Dense class probabilities, channels-last.
pub type ProbMap = FeatureMap;

/// Averages overlapping patch probabilities by the overlap index and takes
/// the per-pixel argmax (ties go to the lowest class index).
pub fn reconstruct(prob_patches: &[FeatureMap], grid: &PatchGrid, oi: &OverlapIndex) -> Result<(ProbMap, LabelMask)> {
    let (h, w) = grid.image_size()?;
    let p = grid.patch_size;
    if prob_patches.len() != grid.patch_count() {
        return Err(Error::ShapeMismatch(format!(
            "{} patches for a grid of {}",
            prob_patches.len(),
            grid.patch_count()
        )));
    }
    if oi.counts.height != h || oi.counts.width != w {
        return Err(Error::ShapeMismatch("overlap index does not match grid".into()));
    }
    let classes = prob_patches.first().map(|m| m.c).unwrap_or(0);
    if classes == 0 {
        return Err(Error::ShapeMismatch("patches have no channels".into()));
    }
    for m in prob_patches {
        if m.h != p || m.w != p || m.c != classes {
            return Err(Error::ShapeMismatch(format!("patch {}x{}x{}, expected {p}x{p}x{classes}", m.h, m.w, m.c)));
        }
    }
    let mut acc = vec![0f32; h * w * classes];
    for (patch, (r0, c0)) in prob_patches.iter().zip(grid.origins()) {
        for r in 0..p {
            let dst = &mut acc[((r0 + r) * w + c0) * classes..][..p * classes];
            let src = &patch.data[r * p * classes..][..p * classes];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    let mut labels = vec![0u8; h * w];
    for (i, px) in acc.chunks_exact_mut(classes).enumerate() {
        let n = oi.counts.data[i];
        if n == 0 {
            return Err(Error::InvalidGeometry("pixel not covered by any patch".into()));
        }
        let inv = n as f32;
        for v in px.iter_mut() {
            *v /= inv;
        }
        labels[i] = argmax(px) as u8;
    }
    Ok((FeatureMap { h, w, c: classes, data: acc }, Plane::new(w, h, labels)?))
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
