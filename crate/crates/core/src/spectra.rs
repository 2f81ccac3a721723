//! Spectral statistics on labelled cubes: band correlation, Gaussian class
//! separability and greedy orthogonal-projection band selection.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::{HsiCube, LabelMask, IGNORE_LABEL};
use crate::error::{Error, Result};

/// Diagonal loading applied when a covariance is not safely invertible,
/// relative to `trace / d`.
pub const COV_REGULARIZATION: f64 = 1e-6;

/// Pivot ratio below which a Cholesky factor counts as ill-conditioned.
const CONDITION_FLOOR: f64 = 1e-12;

/// Row-major `n x bands` sample matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelSet {
    pub bands: usize,
    pub data: Vec<f32>,
}

impl PixelSet {
    pub fn new(bands: usize, data: Vec<f32>) -> Result<Self> {
        if bands == 0 || !data.len().is_multiple_of(bands) {
            return Err(Error::ShapeMismatch(format!("{} values for {bands} bands", data.len())));
        }
        Ok(PixelSet { bands, data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.bands
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        &self.data[i * self.bands..(i + 1) * self.bands]
    }

    /// Every pixel of the cube, or only those whose label passes `keep`.
    pub fn from_cube(cube: &HsiCube, mask: Option<&LabelMask>, keep: impl Fn(u8) -> bool) -> Result<Self> {
        if let Some(m) = mask {
            if m.height != cube.height || m.width != cube.width {
                return Err(Error::ShapeMismatch(format!(
                    "mask {}x{} vs cube {}x{}",
                    m.height, m.width, cube.height, cube.width
                )));
            }
        }
        let mut data = Vec::new();
        for i in 0..cube.plane_len() {
            if mask.is_some_and(|m| !keep(m.data[i])) {
                continue;
            }
            data.extend((0..cube.bands).map(|b| cube.data[b * cube.plane_len() + i]));
        }
        PixelSet::new(cube.bands, data)
    }

    /// All labelled (non-ignored) pixels.
    pub fn labelled(cube: &HsiCube, mask: &LabelMask) -> Result<Self> {
        Self::from_cube(cube, Some(mask), |l| l != IGNORE_LABEL)
    }
}

/// Running count, mean and co-moment matrix (Welford), mergeable.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub count: u64,
    pub mean: DVector<f64>,
    /// Sum of outer products of deviations from the mean.
    pub comoment: DMatrix<f64>,
}

impl ClassStats {
    pub fn new(bands: usize) -> Self {
        ClassStats { count: 0, mean: DVector::zeros(bands), comoment: DMatrix::zeros(bands, bands) }
    }

    pub fn bands(&self) -> usize {
        self.mean.len()
    }

    pub fn push(&mut self, x: &[f32]) {
        let d = self.bands();
        self.count += 1;
        let n = self.count as f64;
        let delta: Vec<f64> = (0..d).map(|i| x[i] as f64 - self.mean[i]).collect();
        for i in 0..d {
            self.mean[i] += delta[i] / n;
        }
        for i in 0..d {
            let after = x[i] as f64 - self.mean[i];
            for j in 0..d {
                self.comoment[(j, i)] += delta[j] * after;
            }
        }
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&mut self, other: &ClassStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta = &other.mean - &self.mean;
        self.comoment += &other.comoment + (&delta * delta.transpose()) * (na * nb / n);
        self.mean += delta * (nb / n);
        self.count += other.count;
    }

    pub fn from_pixels(px: &PixelSet) -> Self {
        let mut s = ClassStats::new(px.bands);
        for i in 0..px.len() {
            s.push(px.sample(i));
        }
        s
    }

    /// Unbiased sample covariance; needs at least two samples.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        if self.count < 2 {
            return Err(Error::InsufficientData(format!("{} samples, need at least 2", self.count)));
        }
        let c = &self.comoment / (self.count as f64 - 1.0);
        // symmetrize away accumulation asymmetry
        Ok((&c + c.transpose()) * 0.5)
    }
}

/// Per-class statistics of a labelled cube, accumulated per row in
/// parallel and merged. Ignored pixels are skipped.
pub fn class_stats(cube: &HsiCube, mask: &LabelMask, classes: usize) -> Result<Vec<ClassStats>> {
    if mask.height != cube.height || mask.width != cube.width {
        return Err(Error::ShapeMismatch("mask does not match cube".into()));
    }
    let plane = cube.plane_len();
    let w = cube.width;
    (0..cube.height)
        .into_par_iter()
        .try_fold(
            || vec![ClassStats::new(cube.bands); classes],
            |mut acc, y| {
                let mut px = vec![0f32; cube.bands];
                for x in 0..w {
                    let i = y * w + x;
                    let l = mask.data[i];
                    if l == IGNORE_LABEL {
                        continue;
                    }
                    if l as usize >= classes {
                        return Err(Error::LabelOutOfRange { label: l, classes });
                    }
                    for (b, v) in px.iter_mut().enumerate() {
                        *v = cube.data[b * plane + i];
                    }
                    acc[l as usize].push(&px);
                }
                Ok(acc)
            },
        )
        .try_reduce(
            || vec![ClassStats::new(cube.bands); classes],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    x.merge(y);
                }
                Ok(a)
            },
        )
}

/// Symmetric matrix with optional entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareReport {
    pub labels: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl SquareReport {
    pub fn to_csv(&self, decimals: usize) -> String {
        let mut out = String::from("");
        out.push_str(&self.labels.join(","));
        out.insert(0, ',');
        out.push('\n');
        for (name, row) in self.labels.iter().zip(&self.values) {
            out.push_str(name);
            for v in row {
                out.push(',');
                if let Some(v) = v {
                    out.push_str(&format!("{v:.decimals$}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Pearson correlation between bands. Entries involving a zero-variance
/// band are missing.
pub fn band_correlation(px: &PixelSet) -> Result<SquareReport> {
    if px.len() < 2 {
        return Err(Error::InsufficientData(format!("{} samples, need at least 2", px.len())));
    }
    let cov = ClassStats::from_pixels(px).covariance()?;
    let d = px.bands;
    let sd: Vec<f64> = (0..d).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    let values = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    if sd[i] <= 0.0 || sd[j] <= 0.0 {
                        None
                    } else if i == j {
                        Some(1.0)
                    } else {
                        Some((cov[(i, j)] / (sd[i] * sd[j])).clamp(-1.0, 1.0))
                    }
                })
                .collect()
        })
        .collect();
    Ok(SquareReport { labels: (0..d).map(|b| format!("b{b}")).collect(), values })
}

fn well_conditioned(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let ch = Cholesky::new(m.clone())?;
    let diag = ch.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0f64), |(lo, hi), &v| (lo.min(v * v), hi.max(v * v)));
    (lo > 0.0 && lo / hi > CONDITION_FLOOR).then_some(ch)
}

fn log_det(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

fn regularize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows() as f64;
    let load = COV_REGULARIZATION * (m.trace() / d).max(f64::MIN_POSITIVE);
    m + DMatrix::identity(m.nrows(), m.ncols()) * load
}

/// Bhattacharyya distance between two Gaussians. Covariances are used as
/// given when all three factorizations are well conditioned; otherwise each
/// gets diagonal loading of `1e-6 * trace / d` first.
pub fn bhattacharyya(
    mu_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
    mu_b: &DVector<f64>,
    cov_b: &DMatrix<f64>,
) -> Result<f64> {
    let d = mu_a.len();
    if mu_b.len() != d || cov_a.shape() != (d, d) || cov_b.shape() != (d, d) {
        return Err(Error::ShapeMismatch("class statistics have different band counts".into()));
    }
    let attempt = |a: &DMatrix<f64>, b: &DMatrix<f64>| -> Option<f64> {
        let avg = (a + b) * 0.5;
        let (ca, cb, cm) = (well_conditioned(a)?, well_conditioned(b)?, well_conditioned(&avg)?);
        let diff = mu_a - mu_b;
        let maha = diff.dot(&cm.solve(&diff));
        let b = 0.125 * maha + 0.5 * (log_det(&cm) - 0.5 * (log_det(&ca) + log_det(&cb)));
        b.is_finite().then_some(b.max(0.0))
    };
    attempt(cov_a, cov_b).or_else(|| attempt(&regularize(cov_a), &regularize(cov_b))).ok_or(Error::SingularCovariance)
}

/// `JM = 2 (1 - exp(-B))`, in `[0, 2]`.
pub fn jm_from_bhattacharyya(b: f64) -> f64 {
    2.0 * (1.0 - (-b).exp())
}

pub fn jm_distance(a: &ClassStats, b: &ClassStats) -> Result<f64> {
    let b = bhattacharyya(&a.mean, &a.covariance()?, &b.mean, &b.covariance()?)?;
    Ok(jm_from_bhattacharyya(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    pub matrix: SquareReport,
    /// Mean JM of each class against the others.
    pub row_mean: Vec<Option<f64>>,
}

/// Pairwise JM matrix; pairs involving a class with fewer than two samples
/// are missing.
pub fn jm_matrix(stats: &[ClassStats], names: Option<&[String]>) -> Result<SeparabilityReport> {
    let c = stats.len();
    let mut values = vec![vec![None; c]; c];
    for i in 0..c {
        if stats[i].count >= 2 {
            values[i][i] = Some(0.0);
        }
        for j in i + 1..c {
            if stats[i].count < 2 || stats[j].count < 2 {
                continue;
            }
            let v = jm_distance(&stats[i], &stats[j])?;
            values[i][j] = Some(v);
            values[j][i] = Some(v);
        }
    }
    let row_mean = (0..c)
        .map(|i| {
            let vals: Vec<f64> = (0..c).filter(|&j| j != i).filter_map(|j| values[i][j]).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect();
    let labels = (0..c).map(|i| names.and_then(|n| n.get(i).cloned()).unwrap_or_else(|| format!("class{i}"))).collect();
    Ok(SeparabilityReport { matrix: SquareReport { labels, values }, row_mean })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSelection {
    pub bands: Vec<usize>,
    /// Residual norm of each band at the time it was chosen.
    pub residual_norms: Vec<f64>,
}

/// Relative residual below which a column counts as linearly dependent.
const RANK_TOL: f64 = 1e-9;

/// Greedy orthogonal-subspace projection: pick the band column with the
/// largest norm, then repeatedly the one with the largest residual after
/// projecting out the chosen columns. Ties go to the lower band.
pub fn select_bands(px: &PixelSet, k: usize) -> Result<BandSelection> {
    let d = px.bands;
    if k > d {
        return Err(Error::InvalidConfig(format!("cannot select {k} of {d} bands")));
    }
    let n = px.len();
    let mut cols: Vec<Vec<f64>> = (0..d).map(|b| (0..n).map(|i| px.data[i * d + b] as f64).collect()).collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = cols.iter().map(|c| norm(c)).fold(0.0, f64::max);
    let mut chosen = Vec::with_capacity(k);
    let mut norms = Vec::with_capacity(k);
    let mut used = vec![false; d];
    while chosen.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for b in (0..d).filter(|&b| !used[b]) {
            let r = norm(&cols[b]);
            if best.is_none_or(|(_, bn)| r > bn) {
                best = Some((b, r));
            }
        }
        let (b, r) = best.expect("k <= d leaves a candidate");
        if !(r > RANK_TOL * scale) || scale == 0.0 {
            return Err(Error::RankDeficient { requested: k, found: chosen.len() });
        }
        used[b] = true;
        chosen.push(b);
        norms.push(r);
        let q: Vec<f64> = cols[b].iter().map(|v| v / r).collect();
        cols.par_iter_mut().enumerate().filter(|(j, _)| !used[*j]).for_each(|(_, c)| {
            let dot: f64 = c.iter().zip(&q).map(|(a, b)| a * b).sum();
            for (x, qv) in c.iter_mut().zip(&q) {
                *x -= dot * qv;
            }
        });
    }
    Ok(BandSelection { bands: chosen, residual_norms: norms })
}

/// Most frequent band per selection slot across images; ties go to the
/// lower band index.
pub fn mode_per_slot(selections: &[Vec<usize>]) -> Vec<usize> {
    let k = selections.iter().map(Vec::len).max().unwrap_or(0);
    (0..k)
        .map(|slot| {
            let mut counts = std::collections::BTreeMap::<usize, usize>::new();
            for s in selections.iter().filter_map(|s| s.get(slot)) {
                *counts.entry(*s).or_default() += 1;
            }
            let max = counts.values().copied().max().unwrap_or(0);
            counts.into_iter().find(|&(_, c)| c == max).map(|(b, _)| b).unwrap_or(0)
        })
        .collect()
}
