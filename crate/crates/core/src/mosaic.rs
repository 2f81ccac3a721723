//! Raw snapshot-mosaic frames to reflectance cubes.
//!
//! The sensor carries a repeating 5x5 filter tile, so each 5x5 block of the
//! active area ("mosaic") holds one sample of every band. Preprocessing runs
//! four stages:
//!
//! 1. crop and clip the frame to the active area,
//! 2. correct radiance to reflectance against dark and white references,
//! 3. gather each band's samples into a lattice cube (one value per mosaic),
//! 4. re-estimate every band at the mosaic center by bilinear interpolation
//!    on that band's pitch-5 lattice.
//!
//! Every stage has a straightforward per-pixel kernel and a row-sliced kernel
//! selected by [`PreprocessOptions::vectorized`]. Both evaluate the same
//! arithmetic in the same order, so their outputs are bitwise identical.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::{HsiCube, Plane};
use crate::error::{Error, Result};
use crate::parallel::Workers;

pub const MOSAIC: usize = 5;
pub const BANDS: usize = MOSAIC * MOSAIC;
pub const CENTER: usize = 2;

pub const SENSOR_HEIGHT: usize = 1088;
pub const SENSOR_WIDTH: usize = 2048;
pub const ACTIVE_HEIGHT: usize = 1080;
pub const ACTIVE_WIDTH: usize = 2045;

/// Counts after crop-and-clip, restricted to the active area.
pub type ActiveFrame = Plane<u16>;
/// Per-pixel reflectance of the active area.
pub type ActiveReflectance = Plane<f32>;

/// A raw sensor frame of radiance counts.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    pub bit_depth: u8,
    pub pixels: Plane<u16>,
}

impl RawFrame {
    pub fn new(width: usize, height: usize, bit_depth: u8, data: Vec<u16>) -> Result<Self> {
        if bit_depth == 0 || bit_depth > 16 {
            return Err(Error::InvalidConfig(format!("bit depth {bit_depth} not in 1..=16")));
        }
        Ok(RawFrame { bit_depth, pixels: Plane::new(width, height, data)? })
    }

    pub fn width(&self) -> usize {
        self.pixels.width
    }

    pub fn height(&self) -> usize {
        self.pixels.height
    }

    pub fn full_scale(&self) -> u16 {
        full_scale(self.bit_depth)
    }
}

pub fn full_scale(bit_depth: u8) -> u16 {
    ((1u32 << bit_depth) - 1) as u16
}

/// Dark and white calibration frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFrames {
    pub dark: RawFrame,
    pub white: RawFrame,
}

/// Geometry of the filter tile and the active sensor area.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MosaicLayout {
    #[serde(default = "default_layout_id")]
    pub id: String,
    /// `tile[dr][dc]` is the band sampled at mosaic offset `(dr, dc)`.
    pub tile: [[u8; MOSAIC]; MOSAIC],
    /// `(row, col)` of the first active pixel.
    pub origin: [usize; 2],
    /// `(rows, cols)` of the active area.
    pub active_size: [usize; 2],
}

fn default_layout_id() -> String {
    "row-major-5x5".to_string()
}

impl Default for MosaicLayout {
    fn default() -> Self {
        let mut tile = [[0u8; MOSAIC]; MOSAIC];
        for (dr, row) in tile.iter_mut().enumerate() {
            for (dc, band) in row.iter_mut().enumerate() {
                *band = (dr * MOSAIC + dc) as u8;
            }
        }
        MosaicLayout { id: default_layout_id(), tile, origin: [0, 0], active_size: [ACTIVE_HEIGHT, ACTIVE_WIDTH] }
    }
}

impl MosaicLayout {
    /// Default tile with a custom active window.
    pub fn with_active(origin: [usize; 2], active_size: [usize; 2]) -> Self {
        MosaicLayout { origin, active_size, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = [false; BANDS];
        for row in &self.tile {
            for &b in row {
                let b = b as usize;
                if b >= BANDS || seen[b] {
                    return Err(Error::InvalidConfig(format!(
                        "layout `{}`: tile is not a permutation of 0..{BANDS}",
                        self.id
                    )));
                }
                seen[b] = true;
            }
        }
        let [rows, cols] = self.active_size;
        if rows == 0 || cols == 0 || rows % MOSAIC != 0 || cols % MOSAIC != 0 {
            return Err(Error::InvalidConfig(format!(
                "layout `{}`: active area {rows}x{cols} is not a whole number of mosaics",
                self.id
            )));
        }
        Ok(())
    }

    /// Mosaic offset `(dr, dc)` of every band.
    pub fn band_offsets(&self) -> [(usize, usize); BANDS] {
        let mut offsets = [(0, 0); BANDS];
        for (dr, row) in self.tile.iter().enumerate() {
            for (dc, &b) in row.iter().enumerate() {
                offsets[b as usize] = (dr, dc);
            }
        }
        offsets
    }

    /// Cube size `(rows, cols)` in mosaics.
    pub fn cube_size(&self) -> (usize, usize) {
        (self.active_size[0] / MOSAIC, self.active_size[1] / MOSAIC)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub threads: usize,
    /// Row-sliced kernels when true, per-pixel reference kernels otherwise.
    pub vectorized: bool,
    /// Degeneracy threshold for `white - dark`, as a fraction of full scale.
    pub eps_fraction: f32,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions { threads: 1, vectorized: true, eps_fraction: 1e-6 }
    }
}

/// Warning statistics from reflectance correction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionStats {
    /// Pixels where `white - dark <= eps`; they are set to 0.
    pub degenerate: usize,
    /// Pixels clamped from above 1.
    pub clipped_high: usize,
    /// Pixels clamped from below 0.
    pub clipped_low: usize,
}

impl CorrectionStats {
    fn merge(self, o: CorrectionStats) -> CorrectionStats {
        CorrectionStats {
            degenerate: self.degenerate + o.degenerate,
            clipped_high: self.clipped_high + o.clipped_high,
            clipped_low: self.clipped_low + o.clipped_low,
        }
    }
}

pub const STAGE_CROP: &str = "Image cropping";
pub const STAGE_REFLECTANCE: &str = "Reflectance correction";
pub const STAGE_BAND_EXTRACTION: &str = "Band extraction";
pub const STAGE_TRANSLATION: &str = "Translation to center";
pub const STAGE_TOTAL: &str = "Total";
pub const PREPROCESS_STAGES: [&str; 4] = [STAGE_CROP, STAGE_REFLECTANCE, STAGE_BAND_EXTRACTION, STAGE_TRANSLATION];

#[derive(Debug, Clone, PartialEq)]
pub struct StageTimings {
    pub stages: Vec<(&'static str, Duration)>,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.stages.iter().map(|(_, d)| *d).sum()
    }

    pub fn get(&self, name: &str) -> Option<Duration> {
        self.stages.iter().find(|(n, _)| *n == name).map(|(_, d)| *d)
    }
}

/// Stage 1: cut the active window out of the sensor frame and clip counts
/// to the frame's bit depth.
pub fn crop_clip(frame: &RawFrame, layout: &MosaicLayout) -> Result<ActiveFrame> {
    crop_clip_with(frame, layout, true)
}

fn crop_clip_with(frame: &RawFrame, layout: &MosaicLayout, vectorized: bool) -> Result<ActiveFrame> {
    let [r0, c0] = layout.origin;
    let [rows, cols] = layout.active_size;
    if frame.height() < r0 + rows || frame.width() < c0 + cols {
        return Err(Error::DimensionMismatch(format!(
            "frame {}x{} is smaller than active window {rows}x{cols} at ({r0},{c0})",
            frame.height(),
            frame.width()
        )));
    }
    let max = frame.full_scale();
    let src = &frame.pixels;
    let mut out = vec![0u16; rows * cols];
    if vectorized {
        out.par_chunks_mut(cols).enumerate().for_each(|(r, dst)| {
            let start = (r0 + r) * src.width + c0;
            for (d, &s) in dst.iter_mut().zip(&src.data[start..start + cols]) {
                *d = s.min(max);
            }
        });
    } else {
        out.par_chunks_mut(cols).enumerate().for_each(|(r, dst)| {
            for (c, d) in dst.iter_mut().enumerate() {
                *d = src.get(r0 + r, c0 + c).min(max);
            }
        });
    }
    Plane::new(cols, rows, out)
}

#[inline]
fn reflectance(i: u16, d: u16, w: u16, eps: f32) -> (f32, CorrectionStats) {
    let mut stats = CorrectionStats::default();
    let span = w as f32 - d as f32;
    if span <= eps {
        stats.degenerate = 1;
        return (0.0, stats);
    }
    let r = (i as f32 - d as f32) / span;
    if r > 1.0 {
        stats.clipped_high = 1;
        (1.0, stats)
    } else if r < 0.0 {
        stats.clipped_low = 1;
        (0.0, stats)
    } else {
        (r, stats)
    }
}

/// Stage 2: `r = clamp((I - D) / (W - D), 0, 1)` per pixel. `eps` is in
/// counts; pixels whose white-dark span does not exceed it map to 0 and are
/// reported in the returned statistics.
pub fn reflectance_correct(
    img: &ActiveFrame,
    refs: &ReferenceFrames,
    eps: f32,
) -> Result<(ActiveReflectance, CorrectionStats)> {
    reflectance_correct_with(img, &refs.dark.pixels, &refs.white.pixels, eps, true)
}

fn reflectance_correct_with(
    img: &ActiveFrame,
    dark: &Plane<u16>,
    white: &Plane<u16>,
    eps: f32,
    vectorized: bool,
) -> Result<(ActiveReflectance, CorrectionStats)> {
    if !img.same_dims(dark) || !img.same_dims(white) {
        return Err(Error::DimensionMismatch(format!(
            "image {}x{}, dark {}x{}, white {}x{}",
            img.height, img.width, dark.height, dark.width, white.height, white.width
        )));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidConfig(format!("eps must be positive, got {eps}")));
    }
    let cols = img.width;
    let mut out = vec![0f32; img.data.len()];
    let stats = if vectorized {
        out.par_chunks_mut(cols)
            .enumerate()
            .map(|(r, dst)| {
                let mut acc = CorrectionStats::default();
                let (ir, dr, wr) = (img.row(r), dark.row(r), white.row(r));
                for c in 0..cols {
                    let (v, s) = reflectance(ir[c], dr[c], wr[c], eps);
                    dst[c] = v;
                    acc = acc.merge(s);
                }
                acc
            })
            .reduce(CorrectionStats::default, CorrectionStats::merge)
    } else {
        out.par_chunks_mut(cols)
            .enumerate()
            .map(|(r, dst)| {
                let mut acc = CorrectionStats::default();
                for (c, d) in dst.iter_mut().enumerate() {
                    let (v, s) = reflectance(img.get(r, c), dark.get(r, c), white.get(r, c), eps);
                    *d = v;
                    acc = acc.merge(s);
                }
                acc
            })
            .reduce(CorrectionStats::default, CorrectionStats::merge)
    };
    Ok((Plane::new(cols, img.height, out)?, stats))
}

fn check_divisible(refl: &ActiveReflectance) -> Result<(usize, usize)> {
    if refl.width == 0 || refl.height == 0 || !refl.width.is_multiple_of(MOSAIC) || !refl.height.is_multiple_of(MOSAIC)
    {
        return Err(Error::DimensionMismatch(format!(
            "reflectance {}x{} is not a whole number of {MOSAIC}x{MOSAIC} mosaics",
            refl.height, refl.width
        )));
    }
    Ok((refl.height / MOSAIC, refl.width / MOSAIC))
}

/// Stage 3: gather band `b` from offset `(dr_b, dc_b)` of every mosaic, so
/// `cube[r][c][b] = refl[5r + dr_b][5c + dc_b]`. No interpolation.
pub fn band_extract(refl: &ActiveReflectance, layout: &MosaicLayout) -> Result<HsiCube> {
    band_extract_with(refl, layout, true)
}

fn band_extract_with(refl: &ActiveReflectance, layout: &MosaicLayout, vectorized: bool) -> Result<HsiCube> {
    layout.validate()?;
    let (h, w) = check_divisible(refl)?;
    let offsets = layout.band_offsets();
    let mut cube = HsiCube::zeros(h, w, BANDS);
    // One output row of one band per task.
    cube.data.par_chunks_mut(w).enumerate().for_each(|(idx, dst)| {
        let (b, r) = (idx / h, idx % h);
        let (dr, dc) = offsets[b];
        if vectorized {
            let src = refl.row(MOSAIC * r + dr);
            for (d, s) in dst.iter_mut().zip(src[dc..].iter().step_by(MOSAIC)) {
                *d = *s;
            }
        } else {
            for (c, d) in dst.iter_mut().enumerate() {
                *d = refl.get(MOSAIC * r + dr, MOSAIC * c + dc);
            }
        }
    });
    Ok(cube)
}

/// Interpolation rule along one axis for a band sampled at offset `off`
/// within each mosaic, evaluated at the mosaic center.
#[derive(Debug, Clone, Copy)]
struct AxisRule {
    /// Lattice step from the current mosaic to the lower neighbour (0 or -1).
    lower: isize,
    /// Weight of the upper neighbour.
    t: f32,
}

impl AxisRule {
    fn new(off: usize) -> Self {
        use std::cmp::Ordering::*;
        match off.cmp(&CENTER) {
            // samples at 5i + off, center at 5i + 2: between i and i + 1
            Less => AxisRule { lower: 0, t: (CENTER - off) as f32 / MOSAIC as f32 },
            Equal => AxisRule { lower: 0, t: 0.0 },
            // between i - 1 and i
            Greater => AxisRule { lower: -1, t: (MOSAIC + CENTER - off) as f32 / MOSAIC as f32 },
        }
    }

    /// Clamped lattice indices `(lo, hi)` for mosaic `i` on an axis of `n`
    /// mosaics. Outside the lattice hull both collapse to the nearest sample.
    #[inline]
    fn indices(&self, i: usize, n: usize) -> (usize, usize) {
        if self.t == 0.0 {
            return (i, i);
        }
        let lo = i as isize + self.lower;
        let hi = lo + 1;
        let clamp = |k: isize| k.clamp(0, n as isize - 1) as usize;
        (clamp(lo), clamp(hi))
    }
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + t * (b - a)
}

/// Stage 4 on an already extracted lattice cube: re-estimate each band at
/// the mosaic center. Bilinear inside the band's lattice hull; where one axis
/// falls outside, linear along the other; outside both, the nearest sample.
/// The band whose native offset is the center is copied verbatim.
pub fn translate_lattice(lattice: &HsiCube, layout: &MosaicLayout) -> Result<HsiCube> {
    translate_lattice_with(lattice, layout, true)
}

fn translate_lattice_with(lattice: &HsiCube, layout: &MosaicLayout, vectorized: bool) -> Result<HsiCube> {
    layout.validate()?;
    if lattice.bands != BANDS {
        return Err(Error::DimensionMismatch(format!("lattice cube has {} bands, expected {BANDS}", lattice.bands)));
    }
    let (h, w) = (lattice.height, lattice.width);
    let offsets = layout.band_offsets();
    let mut out = HsiCube::zeros(h, w, BANDS);
    out.data.par_chunks_mut(w).enumerate().for_each(|(idx, dst)| {
        let (b, r) = (idx / h, idx % h);
        let (dr, dc) = offsets[b];
        let (ry, rx) = (AxisRule::new(dr), AxisRule::new(dc));
        let plane = lattice.band(b);
        if vectorized {
            let (i0, i1) = ry.indices(r, h);
            let top = &plane[i0 * w..(i0 + 1) * w];
            let bot = &plane[i1 * w..(i1 + 1) * w];
            for (c, d) in dst.iter_mut().enumerate() {
                let (j0, j1) = rx.indices(c, w);
                let upper = lerp(top[j0], top[j1], rx.t);
                let lower = lerp(bot[j0], bot[j1], rx.t);
                *d = lerp(upper, lower, ry.t);
            }
        } else {
            for (c, d) in dst.iter_mut().enumerate() {
                *d = bilinear_at(lattice, b, r, c, ry, rx);
            }
        }
    });
    Ok(out)
}

fn bilinear_at(lattice: &HsiCube, b: usize, r: usize, c: usize, ry: AxisRule, rx: AxisRule) -> f32 {
    let (i0, i1) = ry.indices(r, lattice.height);
    let (j0, j1) = rx.indices(c, lattice.width);
    let upper = lerp(lattice.get(i0, j0, b), lattice.get(i0, j1, b), rx.t);
    let lower = lerp(lattice.get(i1, j0, b), lattice.get(i1, j1, b), rx.t);
    lerp(upper, lower, ry.t)
}

/// Band extraction followed by center translation.
pub fn translate_to_center(refl: &ActiveReflectance, layout: &MosaicLayout) -> Result<HsiCube> {
    let lattice = band_extract(refl, layout)?;
    translate_lattice(&lattice, layout)
}

/// Output of the full preprocessing chain.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub cube: HsiCube,
    pub timings: StageTimings,
    pub correction: CorrectionStats,
}

/// Runs all four stages on a dedicated pool of `opts.threads` workers.
pub fn preprocess_pipeline(
    frame: &RawFrame,
    refs: &ReferenceFrames,
    layout: &MosaicLayout,
    opts: &PreprocessOptions,
) -> Result<Preprocessed> {
    let workers = Workers::new(opts.threads);
    preprocess_on(&workers, frame, refs, layout, opts)
}

/// As [`preprocess_pipeline`], reusing an existing worker pool (the thread
/// count in `opts` is ignored).
pub fn preprocess_on(
    workers: &Workers,
    frame: &RawFrame,
    refs: &ReferenceFrames,
    layout: &MosaicLayout,
    opts: &PreprocessOptions,
) -> Result<Preprocessed> {
    layout.validate()?;
    let vec = opts.vectorized;
    workers.install(|| {
        let t0 = Instant::now();
        let img = crop_clip_with(frame, layout, vec)?;
        let dark = crop_clip_with(&refs.dark, layout, vec)?;
        let white = crop_clip_with(&refs.white, layout, vec)?;
        let t1 = Instant::now();
        let eps = opts.eps_fraction * frame.full_scale() as f32;
        let (refl, correction) = reflectance_correct_with(&img, &dark, &white, eps, vec)?;
        let t2 = Instant::now();
        let lattice = band_extract_with(&refl, layout, vec)?;
        let t3 = Instant::now();
        let cube = translate_lattice_with(&lattice, layout, vec)?;
        let t4 = Instant::now();
        Ok(Preprocessed {
            cube,
            correction,
            timings: StageTimings {
                stages: vec![
                    (STAGE_CROP, t1 - t0),
                    (STAGE_REFLECTANCE, t2 - t1),
                    (STAGE_BAND_EXTRACTION, t3 - t2),
                    (STAGE_TRANSLATION, t4 - t3),
                ],
            },
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(w: usize, h: usize, f: impl FnMut(usize, usize) -> u16) -> RawFrame {
        RawFrame { bit_depth: 16, pixels: Plane::from_fn(w, h, f) }
    }

    #[test]
    fn default_layout_is_row_major() {
        let l = MosaicLayout::default();
        l.validate().unwrap();
        assert_eq!(l.tile[2][3], 13);
        assert_eq!(l.band_offsets()[7], (1, 2));
        assert_eq!(l.cube_size(), (216, 409));
    }

    #[test]
    fn layout_rejects_non_permutation() {
        let mut l = MosaicLayout::default();
        l.tile[0][0] = 1;
        assert!(l.validate().is_err());
        let l = MosaicLayout::with_active([0, 0], [1080, 2044]);
        assert!(l.validate().is_err());
    }

    #[test]
    fn crop_takes_top_left_active_window() {
        let f = frame(2048, 1088, |r, c| ((r * 7 + c) % 65536) as u16);
        let out = crop_clip(&f, &MosaicLayout::default()).unwrap();
        assert_eq!((out.height, out.width), (1080, 2045));
        assert_eq!(out.get(0, 0), 0);
        assert_eq!(out.get(1079, 2044), f.pixels.get(1079, 2044));
    }

    #[test]
    fn crop_is_identity_on_active_frame() {
        let f = frame(2045, 1080, |r, c| (r ^ c) as u16);
        let out = crop_clip(&f, &MosaicLayout::default()).unwrap();
        assert_eq!(out, f.pixels);
    }

    #[test]
    fn crop_preserves_constant_and_clips_to_bit_depth() {
        let f = frame(2048, 1088, |_, _| 7);
        let out = crop_clip(&f, &MosaicLayout::default()).unwrap();
        assert!(out.data.iter().all(|&v| v == 7));

        let f = RawFrame { bit_depth: 12, pixels: Plane::filled(10, 10, 5000) };
        let out = crop_clip(&f, &MosaicLayout::with_active([0, 0], [10, 10])).unwrap();
        assert!(out.data.iter().all(|&v| v == 4095));
    }

    #[test]
    fn crop_rejects_small_frame() {
        let f = frame(2040, 1088, |_, _| 0);
        assert!(matches!(crop_clip(&f, &MosaicLayout::default()), Err(Error::DimensionMismatch(_))));
        let f = frame(2048, 1088, |_, _| 0);
        let l = MosaicLayout::with_active([9, 0], [1080, 2045]);
        assert!(crop_clip(&f, &l).is_err());
    }

    fn refs(w: usize, h: usize, d: u16, wv: u16) -> ReferenceFrames {
        ReferenceFrames { dark: frame(w, h, |_, _| d), white: frame(w, h, |_, _| wv) }
    }

    #[test]
    fn reflectance_examples() {
        let img = Plane::new(3, 1, vec![100u16, 500, 300]).unwrap();
        let (r, stats) = reflectance_correct(&img, &refs(3, 1, 100, 500), 1e-3).unwrap();
        assert_eq!(r.data, vec![0.0, 1.0, 0.5]);
        assert_eq!(stats, CorrectionStats::default());
    }

    #[test]
    fn reflectance_clamps_and_counts() {
        let img = Plane::new(2, 1, vec![50u16, 900]).unwrap();
        let (r, stats) = reflectance_correct(&img, &refs(2, 1, 100, 500), 1e-3).unwrap();
        assert_eq!(r.data, vec![0.0, 1.0]);
        assert_eq!(stats.clipped_low, 1);
        assert_eq!(stats.clipped_high, 1);

        let img = Plane::new(2, 1, vec![300u16, 300]).unwrap();
        let (r, stats) = reflectance_correct(&img, &refs(2, 1, 400, 400), 1e-3).unwrap();
        assert_eq!(r.data, vec![0.0, 0.0]);
        assert_eq!(stats.degenerate, 2);
    }

    #[test]
    fn reflectance_rejects_mismatch_and_bad_eps() {
        let img = Plane::new(2, 1, vec![1u16, 2]).unwrap();
        assert!(reflectance_correct(&img, &refs(3, 1, 0, 10), 1e-3).is_err());
        assert!(reflectance_correct(&img, &refs(2, 1, 0, 10), 0.0).is_err());
    }

    #[test]
    fn band_extract_fixed_point() {
        let layout = MosaicLayout::default();
        let refl = Plane::from_fn(20, 10, |r, c| layout.tile[r % 5][c % 5] as f32);
        let cube = band_extract(&refl, &layout).unwrap();
        assert_eq!((cube.height, cube.width, cube.bands), (2, 4, 25));
        for b in 0..25 {
            assert!(cube.band(b).iter().all(|&v| v == b as f32));
        }
    }

    #[test]
    fn band_extract_single_mosaic_reads_tile() {
        let mut layout = MosaicLayout::default();
        // reversed tile
        for dr in 0..5 {
            for dc in 0..5 {
                layout.tile[dr][dc] = (24 - (dr * 5 + dc)) as u8;
            }
        }
        let refl = Plane::from_fn(5, 5, |r, c| (r * 5 + c) as f32 / 100.0);
        let cube = band_extract(&refl, &layout).unwrap();
        for b in 0..25 {
            let (dr, dc) = layout.band_offsets()[b];
            assert_eq!(cube.get(0, 0, b), refl.get(dr, dc));
        }
    }

    #[test]
    fn band_extract_full_shape_and_errors() {
        let refl = Plane::filled(2045, 1080, 0.25f32);
        let cube = band_extract(&refl, &MosaicLayout::default()).unwrap();
        assert_eq!((cube.height, cube.width, cube.bands), (216, 409, 25));
        let bad = Plane::filled(7, 5, 0.0f32);
        assert!(band_extract(&bad, &MosaicLayout::default()).is_err());
    }

    #[test]
    fn translation_is_exact_on_plane() {
        let layout = MosaicLayout::default();
        let plane = |r: f64, c: f64| 0.001 * r + 0.0002 * c;
        let refl = Plane::from_fn(2045, 1080, |r, c| plane(r as f64, c as f64) as f32);
        let cube = translate_to_center(&refl, &layout).unwrap();
        let mut worst = 0f64;
        for b in 0..25 {
            for r in 1..215 {
                for c in 1..408 {
                    let want = plane((5 * r + 2) as f64, (5 * c + 2) as f64);
                    worst = worst.max((cube.get(r, c, b) as f64 - want).abs());
                }
            }
        }
        assert!(worst <= 1e-5, "worst {worst}");
    }

    #[test]
    fn translation_of_constant_is_constant() {
        let refl = Plane::filled(2045, 1080, 0.3f32);
        let cube = translate_to_center(&refl, &MosaicLayout::default()).unwrap();
        assert!(cube.data.iter().all(|&v| v == 0.3));
    }

    #[test]
    fn center_band_is_copied() {
        let layout = MosaicLayout::default();
        let refl = Plane::from_fn(25, 15, |r, c| ((r * 31 + c * 17) % 13) as f32 / 13.0);
        let cube = translate_to_center(&refl, &layout).unwrap();
        let center_band = layout.tile[2][2] as usize;
        for r in 0..3 {
            for c in 0..5 {
                assert_eq!(cube.get(r, c, center_band), refl.get(5 * r + 2, 5 * c + 2));
            }
        }
    }

    #[test]
    fn border_falls_back_to_nearest_and_linear() {
        // Single mosaic: every band is outside its hull on both axes.
        let layout = MosaicLayout::default();
        let refl = Plane::from_fn(5, 5, |r, c| (r * 5 + c) as f32);
        let cube = translate_to_center(&refl, &layout).unwrap();
        for b in 0..25 {
            let (dr, dc) = layout.band_offsets()[b];
            assert_eq!(cube.get(0, 0, b), refl.get(dr, dc));
        }
        // One row of two mosaics: band (0,0) interpolates along columns only.
        let refl = Plane::from_fn(10, 5, |_, c| c as f32);
        let cube = translate_to_center(&refl, &layout).unwrap();
        // samples at cols 0 and 5, center at col 2 -> 2.0; row axis is nearest
        assert!((cube.get(0, 0, 0) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn kernels_agree_bitwise() {
        let layout = MosaicLayout::with_active([3, 1], [50, 60]);
        let mut seed = 12345u32;
        let mut next = || {
            seed = seed.wrapping_mul(1664525).wrapping_add(1013904223);
            (seed >> 16) as u16
        };
        let raw = frame(64, 56, |_, _| next() % 4000 + 300);
        let refs = ReferenceFrames {
            dark: frame(64, 56, |r, c| ((r + c) % 50) as u16 + 100),
            white: frame(64, 56, |r, c| 4200 + ((r * c) % 70) as u16),
        };
        let mut outs = Vec::new();
        for vectorized in [false, true] {
            for threads in [1, 3] {
                let opts = PreprocessOptions { threads, vectorized, ..Default::default() };
                outs.push(preprocess_pipeline(&raw, &refs, &layout, &opts).unwrap());
            }
        }
        for o in &outs[1..] {
            assert_eq!(o.cube, outs[0].cube);
            assert_eq!(o.correction, outs[0].correction);
        }
        assert_eq!(outs[0].timings.stages.len(), 4);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn lcg(seed: u64) -> impl FnMut() -> u64 {
            let mut s = seed;
            move || {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                s >> 33
            }
        }

        fn shuffled_layout(seed: u64, rows: usize, cols: usize) -> MosaicLayout {
            let mut next = lcg(seed);
            let mut bands: Vec<u8> = (0..BANDS as u8).collect();
            for i in (1..BANDS).rev() {
                bands.swap(i, next() as usize % (i + 1));
            }
            let mut l = MosaicLayout::with_active([0, 0], [rows, cols]);
            for (i, b) in bands.into_iter().enumerate() {
                l.tile[i / MOSAIC][i % MOSAIC] = b;
            }
            l
        }

        proptest! {
            #[test]
            fn reflectance_stays_in_unit_range(seed in any::<u64>(), w in 1usize..30, h in 1usize..30) {
                let mut next = lcg(seed);
                let img = Plane::from_fn(w, h, |_, _| next() as u16);
                let refs = ReferenceFrames {
                    dark: frame(w, h, |_, _| (next() % 3000) as u16),
                    white: frame(w, h, |_, _| (next() % 65536) as u16),
                };
                let (r, _) = reflectance_correct(&img, &refs, 1.0).unwrap();
                prop_assert!(r.data.iter().all(|v| (0.0..=1.0).contains(v)));
            }

            #[test]
            fn band_extraction_is_a_gather(seed in any::<u64>(), mh in 1usize..6, mw in 1usize..6) {
                let layout = shuffled_layout(seed, 5 * mh, 5 * mw);
                let mut next = lcg(seed ^ 0x9e37);
                let refl = Plane::from_fn(5 * mw, 5 * mh, |_, _| next() as f32 / (1u64 << 31) as f32);
                let cube = band_extract(&refl, &layout).unwrap();
                for (b, &(dr, dc)) in layout.band_offsets().iter().enumerate() {
                    let mut want: Vec<u32> = Vec::new();
                    for r in 0..mh {
                        for c in 0..mw {
                            want.push(refl.get(5 * r + dr, 5 * c + dc).to_bits());
                        }
                    }
                    let got: Vec<u32> = cube.band(b).iter().map(|v| v.to_bits()).collect();
                    prop_assert_eq!(got, want);
                }
            }

            #[test]
            fn translation_is_exact_on_affine_planes(
                a in -0.01f64..0.01, bc in -0.01f64..0.01, c0 in 0.0f64..1.0, seed in any::<u64>()
            ) {
                let (mh, mw) = (8, 9);
                let layout = shuffled_layout(seed, 5 * mh, 5 * mw);
                let f = |r: f64, c: f64| c0 + a * r + bc * c;
                let refl = Plane::from_fn(5 * mw, 5 * mh, |r, c| f(r as f64, c as f64) as f32);
                let cube = translate_to_center(&refl, &layout).unwrap();
                for b in 0..BANDS {
                    for r in 1..mh - 1 {
                        for c in 1..mw - 1 {
                            let want = f((5 * r + CENTER) as f64, (5 * c + CENTER) as f64);
                            prop_assert!((cube.get(r, c, b) as f64 - want).abs() <= 1e-5);
                        }
                    }
                }
            }

            #[test]
            fn kernel_and_thread_choice_do_not_change_output(seed in any::<u64>(), threads in 2usize..5) {
                let mut next = lcg(seed);
                let layout = MosaicLayout::with_active([1, 2], [20, 30]);
                let raw = frame(34, 23, |_, _| (next() % 4096) as u16);
                let refs = ReferenceFrames {
                    dark: frame(34, 23, |_, _| (next() % 200) as u16),
                    white: frame(34, 23, |_, _| 3000 + (next() % 1000) as u16),
                };
                let run = |threads, vectorized| {
                    let opts = PreprocessOptions { threads, vectorized, ..Default::default() };
                    preprocess_pipeline(&raw, &refs, &layout, &opts).unwrap()
                };
                let base = run(1, false);
                for out in [run(1, true), run(threads, false), run(threads, true)] {
                    prop_assert!(out.cube.data.iter().map(|v| v.to_bits()).eq(base.cube.data.iter().map(|v| v.to_bits())));
                    prop_assert_eq!(out.correction, base.correction);
                }
            }

            #[test]
            fn crop_is_idempotent(seed in any::<u64>()) {
                let mut next = lcg(seed);
                let layout = MosaicLayout::with_active([2, 3], [10, 15]);
                let f = frame(20, 14, |_, _| next() as u16);
                let once = crop_clip(&f, &layout).unwrap();
                let again = crop_clip(
                    &RawFrame { bit_depth: 16, pixels: once.clone() },
                    &MosaicLayout::with_active([0, 0], [10, 15]),
                )
                .unwrap();
                prop_assert_eq!(once, again);
            }
        }
    }
}
