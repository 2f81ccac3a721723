//! Confusion matrices and segmentation scores.
//!
//! Per class `i`: recall `TP/(TP+FN)`, precision `TP/(TP+FP)` and IoU
//! `TP/(TP+FN+FP)`. A metric with a zero denominator is missing and left out
//! of every aggregate. Aggregates are overall (pooled over pixels), mean
//! (unweighted over classes present in the ground truth) and weighted.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::{LabelMask, IGNORE_LABEL};
use crate::error::{Error, Result};

/// Rows are ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::ShapeMismatch("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix { classes: c, counts: rows.concat() })
    }

    #[inline]
    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    #[inline]
    pub fn add(&mut self, gt: usize, pred: usize, n: u64) {
        self.counts[gt * self.classes + pred] += n;
    }

    /// Elementwise sum.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::ShapeMismatch(format!(
                "merging {}-class and {}-class matrices",
                self.classes, other.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn tp(&self, i: usize) -> u64 {
        self.get(i, i)
    }

    /// Ground-truth pixels of class `i`.
    pub fn support(&self, i: usize) -> u64 {
        (0..self.classes).map(|j| self.get(i, j)).sum()
    }

    /// Pixels predicted as class `i`.
    pub fn predicted(&self, i: usize) -> u64 {
        (0..self.classes).map(|j| self.get(j, i)).sum()
    }

    pub fn false_negatives(&self, i: usize) -> u64 {
        self.support(i) - self.tp(i)
    }

    pub fn false_positives(&self, i: usize) -> u64 {
        self.predicted(i) - self.tp(i)
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.classes).all(|i| (0..self.classes).all(|j| i == j || self.get(i, j) == 0))
    }
}

/// Counts `(gt, pred)` pairs, skipping pixels whose ground truth is
/// `ignore_label`. Rows are accumulated in parallel and merged.
pub fn accumulate(gt: &LabelMask, pred: &LabelMask, classes: usize, ignore_label: u8) -> Result<ConfusionMatrix> {
    if !gt.same_dims(pred) {
        return Err(Error::ShapeMismatch(format!(
            "ground truth {}x{} vs prediction {}x{}",
            gt.height, gt.width, pred.height, pred.width
        )));
    }
    let w = gt.width.max(1);
    gt.data
        .par_chunks(w)
        .zip(pred.data.par_chunks(w))
        .try_fold(
            || ConfusionMatrix::new(classes),
            |mut cm, (g, p)| {
                for (&a, &b) in g.iter().zip(p) {
                    if a == ignore_label {
                        continue;
                    }
                    for label in [a, b] {
                        if label as usize >= classes {
                            return Err(Error::LabelOutOfRange { label, classes });
                        }
                    }
                    cm.add(a as usize, b as usize, 1);
                }
                Ok(cm)
            },
        )
        .try_reduce(
            || ConfusionMatrix::new(classes),
            |mut a, b| {
                a.merge(&b)?;
                Ok(a)
            },
        )
}

pub fn accumulate_default(gt: &LabelMask, pred: &LabelMask, classes: usize) -> Result<ConfusionMatrix> {
    accumulate(gt, pred, classes, IGNORE_LABEL)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub class: usize,
    pub support: u64,
    #[serde(flatten)]
    pub scores: Scores,
}

/// How per-class weights for the weighted aggregate are chosen.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeights {
    /// Inverse of the ground-truth frequencies in the matrix itself.
    #[default]
    FromMatrix,
    /// Inverse of the given class frequencies (any positive scale).
    Frequencies(Vec<f64>),
    /// Used as given after normalization to sum 1.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassScores>,
    pub overall: Scores,
    pub mean: Scores,
    pub weighted: Scores,
    /// Normalized weights; classes absent from the ground truth get 0.
    pub weights: Vec<f64>,
    pub warnings: Vec<String>,
}

/// `w_i = (1/f_i) / sum_j (1/f_j)`.
pub fn inverse_frequency_weights(freqs: &[f64]) -> Vec<f64> {
    let inv: Vec<f64> = freqs.iter().map(|&f| if f > 0.0 { 1.0 / f } else { 0.0 }).collect();
    let s: f64 = inv.iter().sum();
    inv.iter().map(|v| if s > 0.0 { v / s } else { 0.0 }).collect()
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Weighted mean of the defined entries, weights renormalized over them.
fn weighted_mean(values: impl Iterator<Item = (Option<f64>, f64)>) -> Option<f64> {
    let (mut s, mut wsum) = (0.0, 0.0);
    for (v, w) in values {
        if let Some(v) = v {
            if w > 0.0 {
                s += w * v;
                wsum += w;
            }
        }
    }
    (wsum > 0.0).then(|| s / wsum)
}

pub fn compute_metrics(cm: &ConfusionMatrix, weights: &ClassWeights) -> Result<MetricsReport> {
    if cm.total() == 0 {
        return Err(Error::EmptyMatrix);
    }
    let c = cm.classes;
    let mut warnings = Vec::new();
    let per_class: Vec<ClassScores> = (0..c)
        .map(|i| {
            let (tp, fp, fn_) = (cm.tp(i), cm.false_positives(i), cm.false_negatives(i));
            ClassScores {
                class: i,
                support: cm.support(i),
                scores: Scores {
                    recall: ratio(tp, tp + fn_),
                    precision: ratio(tp, tp + fp),
                    iou: ratio(tp, tp + fp + fn_),
                },
            }
        })
        .collect();
    let present: Vec<bool> = per_class.iter().map(|s| s.support > 0).collect();
    for (i, &p) in present.iter().enumerate() {
        if !p {
            warnings.push(format!("class {i} absent from ground truth; excluded from mean and weighted scores"));
        }
    }

    let raw = match weights {
        ClassWeights::FromMatrix => {
            let freqs: Vec<f64> = per_class.iter().map(|s| s.support as f64).collect();
            inverse_frequency_weights(&freqs)
        }
        ClassWeights::Frequencies(f) | ClassWeights::Explicit(f) => {
            if f.len() != c {
                return Err(Error::ShapeMismatch(format!("{} weights for {c} classes", f.len())));
            }
            if f.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidConfig("class weights must be finite and non-negative".into()));
            }
            if matches!(weights, ClassWeights::Frequencies(_)) {
                inverse_frequency_weights(f)
            } else {
                f.clone()
            }
        }
    };
    let masked: Vec<f64> = raw.iter().zip(&present).map(|(&w, &p)| if p { w } else { 0.0 }).collect();
    let s: f64 = masked.iter().sum();
    let weights_norm: Vec<f64> = masked.iter().map(|w| if s > 0.0 { w / s } else { 0.0 }).collect();

    let agg = |f: fn(&Scores) -> Option<f64>, w: &dyn Fn(usize) -> f64| {
        weighted_mean(per_class.iter().map(|s| (f(&s.scores), w(s.class))))
    };
    let unit = |i: usize| if present[i] { 1.0 } else { 0.0 };
    let wt = |i: usize| weights_norm[i];
    let mean =
        Scores { recall: agg(|s| s.recall, &unit), precision: agg(|s| s.precision, &unit), iou: agg(|s| s.iou, &unit) };
    let weighted =
        Scores { recall: agg(|s| s.recall, &wt), precision: agg(|s| s.precision, &wt), iou: agg(|s| s.iou, &wt) };
    let tp: u64 = (0..c).map(|i| cm.tp(i)).sum();
    let fp: u64 = (0..c).map(|i| cm.false_positives(i)).sum();
    let fn_: u64 = (0..c).map(|i| cm.false_negatives(i)).sum();
    let overall = Scores { recall: ratio(tp, tp + fn_), precision: ratio(tp, tp + fp), iou: ratio(tp, tp + fp + fn_) };
    Ok(MetricsReport { per_class, overall, mean, weighted, weights: weights_norm, warnings })
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_default()
}

impl MetricsReport {
    /// One row per class, then overall, mean and weighted rows. Scores are
    /// percentages with two decimals; missing values are empty cells.
    pub fn to_csv(&self, class_names: Option<&[String]>) -> String {
        let mut out = String::from("class,recall,precision,iou,support,weight\n");
        for (s, w) in self.per_class.iter().zip(&self.weights) {
            let name = class_names.and_then(|n| n.get(s.class).cloned()).unwrap_or_else(|| s.class.to_string());
            out.push_str(&format!(
                "{name},{},{},{},{},{w:.6}\n",
                pct(s.scores.recall),
                pct(s.scores.precision),
                pct(s.scores.iou),
                s.support
            ));
        }
        for (name, s) in [("overall", &self.overall), ("mean", &self.mean), ("weighted", &self.weighted)] {
            out.push_str(&format!("{name},{},{},{},,\n", pct(s.recall), pct(s.precision), pct(s.iou)));
        }
        out
    }
}
