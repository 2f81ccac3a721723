//! Synthetic labelled scenes and the raw mosaic frames that produce them.
//!
//! Each band of the ground-truth cube is a region's signature plus a
//! bilinear gradient over the canvas and optional per-pixel noise. The raw
//! frame samples every band at its lattice positions by bilinear
//! interpolation of the cube (clamped at the edges) and applies
//! `I = D + round(r * (W - D))` against noisy dark and white references.
//! Where the cube is locally bilinear, preprocessing recovers it to within
//! the count quantization `0.5 / (W - D)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cube::{HsiCube, LabelMask, Plane, IGNORE_LABEL};
use crate::error::{Error, Result};
use crate::mosaic::{
    full_scale, MosaicLayout, RawFrame, ReferenceFrames, ACTIVE_HEIGHT, ACTIVE_WIDTH, BANDS, CENTER, MOSAIC,
    SENSOR_HEIGHT, SENSOR_WIDTH,
};

/// Axis-aligned region `[y0, y0 + h) x [x0, x0 + w)` painted with `class`.
/// Later regions overwrite earlier ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub class: u8,
    pub y0: usize,
    pub x0: usize,
    pub h: usize,
    pub w: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    /// Empty means one region of class 0 over the whole canvas.
    pub regions: Vec<Region>,
    /// One 25-vector per class; generated from the seed when absent.
    pub signatures: Option<Vec<Vec<f32>>>,
    /// Std of the per-region jitter added to the class signature.
    pub signature_sigma: f32,
    /// Max deviation of the bilinear gradient at the canvas corners.
    pub gradient: f32,
    /// Std of iid per-pixel noise (breaks bilinear exactness when > 0).
    pub noise: f32,
    pub seed: u64,
    pub dark_level: f32,
    pub white_level: f32,
    /// Std of the per-pixel noise on the reference frames, in counts.
    pub reference_noise: f32,
    pub bit_depth: u8,
    /// Labels within this many pixels of a region boundary are ignored.
    pub ignore_border: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            height: ACTIVE_HEIGHT / MOSAIC,
            width: ACTIVE_WIDTH / MOSAIC,
            classes: 3,
            regions: Vec::new(),
            signatures: None,
            signature_sigma: 0.0,
            gradient: 0.02,
            noise: 0.0,
            seed: 0,
            dark_level: 200.0,
            white_level: 65_300.0,
            reference_noise: 2.0,
            bit_depth: 16,
            ignore_border: 1,
        }
    }
}

impl SceneSpec {
    /// A single smooth region covering the canvas.
    pub fn smooth(seed: u64) -> Self {
        SceneSpec { classes: 1, seed, ..Default::default() }
    }

    /// Three-class road-like layout: a top band, a bottom band and a
    /// central block, all on the default canvas.
    pub fn three_class(seed: u64) -> Self {
        let (h, w) = (ACTIVE_HEIGHT / MOSAIC, ACTIVE_WIDTH / MOSAIC);
        SceneSpec {
            classes: 3,
            seed,
            signature_sigma: 0.01,
            regions: vec![
                Region { class: 0, y0: 0, x0: 0, h: 90, w },
                Region { class: 2, y0: 90, x0: 0, h: h - 90, w },
                Region { class: 1, y0: 70, x0: 150, h: 60, w: 110 },
                Region { class: 1, y0: 150, x0: 20, h: 40, w: 60 },
            ],
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.height == 0 || self.width == 0 {
            return bad("empty canvas".into());
        }
        if self.height * MOSAIC > SENSOR_HEIGHT || self.width * MOSAIC > SENSOR_WIDTH {
            return bad(format!("canvas {}x{} does not fit the sensor", self.height, self.width));
        }
        if self.classes == 0 || self.classes > IGNORE_LABEL as usize {
            return bad(format!("{} classes", self.classes));
        }
        if self.bit_depth == 0 || self.bit_depth > 16 {
            return bad(format!("bit depth {}", self.bit_depth));
        }
        let fs = full_scale(self.bit_depth) as f32;
        if !(0.0 <= self.dark_level && self.dark_level < self.white_level && self.white_level <= fs) {
            return bad(format!("need 0 <= dark < white <= {fs}"));
        }
        for v in [self.signature_sigma, self.gradient, self.noise, self.reference_noise] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad("noise and gradient levels must be non-negative".into());
            }
        }
        for r in &self.regions {
            if r.class as usize >= self.classes {
                return bad(format!("region class {} >= {}", r.class, self.classes));
            }
            if r.h == 0 || r.w == 0 || r.y0 + r.h > self.height || r.x0 + r.w > self.width {
                return bad(format!("region {r:?} outside the canvas"));
            }
        }
        if let Some(s) = &self.signatures {
            if s.len() != self.classes || s.iter().any(|v| v.len() != BANDS) {
                return bad(format!("need {} signatures of {BANDS} values", self.classes));
            }
            if s.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
                return bad("signatures must lie in [0, 1]".into());
            }
        }
        Ok(())
    }
}

/// Smooth, well separated class spectra: a level, a slope and a bump at a
/// class-specific wavelength, kept inside `[0.1, 0.85]`.
pub fn generate_signatures(classes: usize, rng: &mut impl Rng) -> Vec<Vec<f32>> {
    (0..classes)
        .map(|k| {
            let level = 0.2 + 0.45 * (k as f32 + rng.random::<f32>() * 0.5) / classes.max(1) as f32;
            let slope = rng.random_range(-0.15f32..0.15);
            let centre = (k as f32 + 0.5) / classes as f32 * (BANDS - 1) as f32;
            let amp = rng.random_range(0.1f32..0.2);
            (0..BANDS)
                .map(|b| {
                    let t = b as f32 / (BANDS - 1) as f32;
                    let bump = amp * (-((b as f32 - centre) / 3.0).powi(2)).exp();
                    (level + slope * (t - 0.5) + bump).clamp(0.1, 0.85)
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub cube: HsiCube,
    pub mask: LabelMask,
    /// Class per pixel before boundary pixels are ignored.
    pub labels: LabelMask,
    pub raw: RawFrame,
    pub refs: ReferenceFrames,
    pub layout: MosaicLayout,
    pub signatures: Vec<Vec<f32>>,
}

fn label_map(spec: &SceneSpec) -> LabelMask {
    let mut labels = Plane::filled(spec.width, spec.height, 0u8);
    for r in &spec.regions {
        for y in r.y0..r.y0 + r.h {
            labels.data[y * spec.width + r.x0..y * spec.width + r.x0 + r.w].fill(r.class);
        }
    }
    labels
}

fn ignore_boundaries(labels: &LabelMask, radius: usize) -> LabelMask {
    let (h, w) = (labels.height, labels.width);
    Plane::from_fn(w, h, |y, x| {
        let c = labels.get(y, x);
        let (y0, y1) = (y.saturating_sub(radius), (y + radius).min(h - 1));
        let (x0, x1) = (x.saturating_sub(radius), (x + radius).min(w - 1));
        let mixed = (y0..=y1).any(|yy| labels.row(yy)[x0..=x1].iter().any(|&v| v != c));
        if mixed {
            IGNORE_LABEL
        } else {
            c
        }
    })
}

/// Bilinear sample of a plane at real coordinates, clamped to the edges.
fn sample(plane: &[f32], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (ty, tx) = (y - y0 as f64, x - x0 as f64);
    let at = |yy: usize, xx: usize| plane[yy * w + xx] as f64;
    let top = at(y0, x0) + tx * (at(y0, x1) - at(y0, x0));
    let bot = at(y1, x0) + tx * (at(y1, x1) - at(y1, x0));
    top + ty * (bot - top)
}

fn reference_frame(level: f32, noise: f32, bit_depth: u8, rng: &mut ChaCha8Rng) -> Result<RawFrame> {
    let fs = full_scale(bit_depth) as f32;
    let dist = Normal::new(0.0f32, noise.max(f32::MIN_POSITIVE)).expect("positive std");
    let data = (0..SENSOR_HEIGHT * SENSOR_WIDTH)
        .map(|_| {
            let n = if noise > 0.0 { dist.sample(rng) } else { 0.0 };
            (level + n).round().clamp(0.0, fs) as u16
        })
        .collect();
    RawFrame::new(SENSOR_WIDTH, SENSOR_HEIGHT, bit_depth, data)
}

/// Builds the scene described by `spec`. The active window starts at the
/// sensor origin and spans `5 * height x 5 * width` pixels.
pub fn synth(spec: &SceneSpec) -> Result<SynthScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w) = (spec.height, spec.width);
    let signatures = match &spec.signatures {
        Some(s) => s.clone(),
        None => generate_signatures(spec.classes, &mut rng),
    };
    let labels = label_map(spec);
    let mask = ignore_boundaries(&labels, spec.ignore_border);

    // per-region signature (class signature plus jitter) indexed by a region map
    let mut region_of = vec![0usize; h * w];
    let regions: Vec<Region> =
        if spec.regions.is_empty() { vec![Region { class: 0, y0: 0, x0: 0, h, w }] } else { spec.regions.clone() };
    let mut covered = vec![false; h * w];
    for (ri, r) in regions.iter().enumerate() {
        for y in r.y0..r.y0 + r.h {
            region_of[y * w + r.x0..y * w + r.x0 + r.w].fill(ri);
            covered[y * w + r.x0..y * w + r.x0 + r.w].fill(true);
        }
    }
    if let Some(i) = covered.iter().position(|c| !c) {
        return Err(Error::InvalidSpec(format!("regions leave pixel ({}, {}) uncovered", i / w, i % w)));
    }
    let jitter = Normal::new(0.0f32, spec.signature_sigma.max(f32::MIN_POSITIVE)).expect("positive std");
    let region_sig: Vec<Vec<f32>> = regions
        .iter()
        .map(|r| {
            signatures[r.class as usize]
                .iter()
                .map(|&s| if spec.signature_sigma > 0.0 { s + jitter.sample(&mut rng) } else { s })
                .collect()
        })
        .collect();

    let mut cube = HsiCube::zeros(h, w, BANDS);
    let noise = Normal::new(0.0f32, spec.noise.max(f32::MIN_POSITIVE)).expect("positive std");
    for b in 0..BANDS {
        let g: [f32; 4] = std::array::from_fn(|_| rng.random_range(-1.0f32..=1.0) * spec.gradient);
        let plane = cube.band_mut(b);
        for y in 0..h {
            let ty = if h > 1 { y as f32 / (h - 1) as f32 } else { 0.0 };
            for x in 0..w {
                let tx = if w > 1 { x as f32 / (w - 1) as f32 } else { 0.0 };
                let grad = (1.0 - ty) * ((1.0 - tx) * g[0] + tx * g[1]) + ty * ((1.0 - tx) * g[2] + tx * g[3]);
                let n = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                plane[y * w + x] = (region_sig[region_of[y * w + x]][b] + grad + n).clamp(0.0, 1.0);
            }
        }
    }

    let layout = MosaicLayout::with_active([0, 0], [h * MOSAIC, w * MOSAIC]);
    let dark = reference_frame(spec.dark_level, spec.reference_noise, spec.bit_depth, &mut rng)?;
    let white = reference_frame(spec.white_level, spec.reference_noise, spec.bit_depth, &mut rng)?;
    let fs = full_scale(spec.bit_depth) as f64;
    let mut raw = dark.pixels.data.clone();
    let offsets = layout.band_offsets();
    for (b, &(dr, dc)) in offsets.iter().enumerate() {
        let plane = cube.band(b);
        let fy = (dr as f64 - CENTER as f64) / MOSAIC as f64;
        let fx = (dc as f64 - CENTER as f64) / MOSAIC as f64;
        for i in 0..h {
            for j in 0..w {
                let r = sample(plane, h, w, i as f64 + fy, j as f64 + fx);
                let p = (i * MOSAIC + dr) * SENSOR_WIDTH + j * MOSAIC + dc;
                let d = dark.pixels.data[p] as f64;
                let wv = white.pixels.data[p] as f64;
                raw[p] = (d + (r * (wv - d)).round()).clamp(0.0, fs) as u16;
            }
        }
    }
    let raw = RawFrame::new(SENSOR_WIDTH, SENSOR_HEIGHT, spec.bit_depth, raw)?;
    Ok(SynthScene { cube, mask, labels, raw, refs: ReferenceFrames { dark, white }, layout, signatures })
}

/// Largest absolute difference between two cubes, split into the interior
/// and the one-pixel border ring.
pub fn recovery_error(truth: &HsiCube, got: &HsiCube) -> Result<(f32, f32)> {
    if (truth.height, truth.width, truth.bands) != (got.height, got.width, got.bands) {
        return Err(Error::ShapeMismatch("cubes differ in shape".into()));
    }
    let (h, w) = (truth.height, truth.width);
    let (mut interior, mut border) = (0f32, 0f32);
    for b in 0..truth.bands {
        let (p, q) = (truth.band(b), got.band(b));
        for y in 0..h {
            for x in 0..w {
                let d = (p[y * w + x] - q[y * w + x]).abs();
                if y == 0 || x == 0 || y == h - 1 || x == w - 1 {
                    border = border.max(d);
                } else {
                    interior = interior.max(d);
                }
            }
        }
    }
    Ok((interior, border))
}
