//! End-to-end orchestration: preprocess, tile, infer, reconstruct, score.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cube::{HsiCube, LabelMask, IGNORE_LABEL};
use crate::error::{Error, Result};
use crate::infer::container::{load_weights, FloatModel, WEIGHTS_FORMAT};
use crate::infer::forward::forward;
use crate::infer::graph::{build_mlp, ModelGraph, MLP_HIDDEN};
use crate::infer::weights::Weights;
use crate::io;
use crate::metrics::{accumulate, compute_metrics, ClassWeights, MetricsReport};
use crate::mosaic::{preprocess_pipeline, MosaicLayout, PreprocessOptions, ReferenceFrames};
use crate::patchwork::{default_grid, extract_patches, overlap_index, reconstruct, PatchGrid, ProbMap};
use crate::quant::container::QUANT_FORMAT;
use crate::quant::{calibrate, load_quantized, qforward, quantize_graph, QuantGraph};
use crate::tensor::{FeatureMap, Tensor};

/// A loaded model, float or int8.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Float(FloatModel),
    Quantized(QuantGraph),
}

impl Model {
    pub fn graph(&self) -> &ModelGraph {
        match self {
            Model::Float(m) => &m.graph,
            Model::Quantized(q) => &q.graph,
        }
    }

    pub fn classes(&self) -> usize {
        self.graph().out_channels()
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self, Model::Quantized(_))
    }

    pub fn predict(&self, input: &FeatureMap) -> Result<FeatureMap> {
        match self {
            Model::Float(m) => forward(&m.graph, &m.weights, input),
            Model::Quantized(q) => qforward(q, input),
        }
    }
}

#[derive(Deserialize)]
struct FormatProbe {
    format: String,
}

/// Loads a float (`.sdw`) or int8 (`.sdq`) container, dispatching on the
/// manifest's format field.
pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = io::read_bytes(path)?;
    let end = bytes.iter().position(|&b| b == b'\n').unwrap_or(bytes.len());
    let probe: FormatProbe =
        serde_json::from_slice(&bytes[..end]).map_err(|e| Error::corrupt(path, format!("bad manifest: {e}")))?;
    match probe.format.as_str() {
        WEIGHTS_FORMAT => Ok(Model::Float(load_weights(path)?)),
        QUANT_FORMAT => Ok(Model::Quantized(load_quantized(path)?)),
        other => Err(Error::corrupt(path, format!("unknown format `{other}`"))),
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(io::read_bytes(path)?)))
}

/// Channels-last copy of a band-major cube.
pub fn cube_to_map(cube: &HsiCube) -> FeatureMap {
    let n = cube.plane_len();
    let mut data = vec![0f32; n * cube.bands];
    for b in 0..cube.bands {
        for (i, &v) in cube.band(b).iter().enumerate() {
            data[i * cube.bands + b] = v;
        }
    }
    FeatureMap { h: cube.height, w: cube.width, c: cube.bands, data }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub probs: ProbMap,
    pub labels: LabelMask,
}

/// Tiles the cube, runs the model on every patch and averages overlapping
/// probabilities.
pub fn segment_cube(cube: &HsiCube, model: &Model, grid: &PatchGrid) -> Result<Segmentation> {
    let grid = grid.resolve((cube.height, cube.width))?;
    let patches = extract_patches(cube, &grid)?;
    let probs: Vec<FeatureMap> = patches.par_iter().map(|p| model.predict(p)).collect::<Result<_>>()?;
    let oi = overlap_index(&grid)?;
    let (probs, labels) = reconstruct(&probs, &grid, &oi)?;
    Ok(Segmentation { probs, labels })
}

/// Calibrates on the cube's own patches and quantizes a float model.
pub fn quantize_on_cube(model: &FloatModel, cube: &HsiCube, grid: &PatchGrid) -> Result<QuantGraph> {
    let patches = extract_patches(cube, &grid.resolve((cube.height, cube.width))?)?;
    let ranges = calibrate(&model.graph, &model.weights, &patches)?;
    quantize_graph(&model.graph, &model.weights, &ranges)
}

/// Input locations and outputs of one segmentation run. Either `cube` or
/// the raw triple with a layout must be given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunManifest {
    pub cube: Option<PathBuf>,
    pub raw: Option<PathBuf>,
    pub dark: Option<PathBuf>,
    pub white: Option<PathBuf>,
    pub layout: Option<PathBuf>,
    pub grid: Option<PathBuf>,
    pub model: PathBuf,
    /// Expected SHA-256 of the model file, hex.
    pub model_sha256: Option<String>,
    pub quantized: bool,
    pub gt: Option<PathBuf>,
    pub out_mask: PathBuf,
    pub render: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl RunManifest {
    /// Checks that every referenced input exists.
    pub fn check_inputs(&self) -> Result<()> {
        let inputs = [&self.cube, &self.raw, &self.dark, &self.white, &self.layout, &self.grid, &self.gt];
        for p in inputs.into_iter().flatten().chain(std::iter::once(&self.model)) {
            if !p.exists() {
                return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
            }
        }
        if self.cube.is_none() && (self.raw.is_none() || self.dark.is_none() || self.white.is_none()) {
            return Err(Error::InvalidConfig("manifest needs a cube or raw, dark and white frames".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub segmentation: Segmentation,
    pub metrics: Option<MetricsReport>,
    pub model_sha256: String,
    pub quantized: bool,
}

/// Runs the whole pipeline described by the manifest and writes the mask,
/// the optional render and the optional metrics CSV.
pub fn run_segment(m: &RunManifest) -> Result<RunOutcome> {
    m.check_inputs()?;
    let hash = file_sha256(&m.model)?;
    if let Some(want) = &m.model_sha256 {
        if !want.eq_ignore_ascii_case(&hash) {
            return Err(Error::corrupt(&m.model, format!("sha256 {hash} does not match manifest {want}")));
        }
    }
    let threads = m.threads.unwrap_or_else(crate::parallel::default_threads);
    let workers = crate::parallel::Workers::new(threads);
    workers.install(|| {
        let cube = match &m.cube {
            Some(p) => io::read_cube(p)?,
            None => {
                let (raw, side) = io::read_raw(m.raw.as_ref().expect("checked"))?;
                let (dark, _) = io::read_raw(m.dark.as_ref().expect("checked"))?;
                let (white, _) = io::read_raw(m.white.as_ref().expect("checked"))?;
                let layout = match &m.layout {
                    Some(p) => io::read_layout(p)?,
                    None => MosaicLayout { id: side.layout_id.clone(), ..Default::default() },
                };
                let opts = PreprocessOptions { threads, ..Default::default() };
                preprocess_pipeline(&raw, &ReferenceFrames { dark, white }, &layout, &opts)?.cube
            }
        };
        let grid = match &m.grid {
            Some(p) => io::read_grid(p)?,
            None => default_grid(),
        };
        let mut model = load_model(&m.model)?;
        if m.quantized {
            if let Model::Float(f) = &model {
                model = Model::Quantized(quantize_on_cube(f, &cube, &grid)?);
            }
        }
        let seg = segment_cube(&cube, &model, &grid)?;
        io::write_pgm(&m.out_mask, &seg.labels)?;
        if let Some(r) = &m.render {
            io::write_ppm(r, &seg.labels)?;
        }
        let metrics = match &m.gt {
            Some(gt) => {
                let gt = io::read_pgm(gt)?;
                let cm = accumulate(&gt, &seg.labels, model.classes(), IGNORE_LABEL)?;
                let report = compute_metrics(&cm, &ClassWeights::FromMatrix)?;
                if let Some(p) = &m.metrics {
                    io::write_bytes(p, report.to_csv(None).as_bytes())?;
                }
                Some(report)
            }
            None => None,
        };
        Ok(RunOutcome { segmentation: seg, metrics, model_sha256: hash.clone(), quantized: model.is_quantized() })
    })
}

/// Gain applied to pairwise score differences so the first tanh saturates
/// at the class centroids.
const PAIR_GAIN: f32 = 4.0;
/// Output scale of the winner detector and of the logits.
const DETECT_GAIN: f32 = 4.0;
const LOGIT_SCALE: f32 = 10.0;

/// Hand-built spectral MLP that assigns each pixel to the nearest
/// band-normalized class signature.
///
/// `fc0` computes `a_ij (|u - m_j|^2 - |u - m_i|^2)` for every class pair
/// `i < j`, saturated by tanh. `fc1` fires for the class that wins all its
/// pairs, `fc2` passes that through and `fc3` scales it into logits. Needs
/// `C (C - 1) / 2 <= 25` pairs.
pub fn nearest_centroid_mlp(signatures: &[Vec<f32>]) -> Result<(ModelGraph, Weights)> {
    let c = signatures.len();
    let bands = signatures.first().map(Vec::len).unwrap_or(0);
    let pairs: Vec<(usize, usize)> = (0..c).flat_map(|i| (i + 1..c).map(move |j| (i, j))).collect();
    let [h0, h1, h2] = MLP_HIDDEN;
    if c < 2 || pairs.len() > h0 || c > h1 || bands == 0 {
        return Err(Error::InvalidConfig(format!("cannot build a centroid classifier for {c} classes")));
    }
    let graph = build_mlp(bands, c)?;
    let centroids: Vec<Vec<f32>> = signatures
        .iter()
        .map(|s| {
            let sum: f32 = s.iter().sum();
            s.iter().map(|v| v / sum).collect()
        })
        .collect();
    let sq = |v: &[f32]| v.iter().map(|x| x * x).sum::<f32>();

    let mut w = Weights::new();
    w.insert("zscore.mean", Tensor::zeros(vec![bands]));
    w.insert("zscore.std", Tensor::filled(vec![bands], 1.0));

    let mut w0 = vec![0f32; h0 * bands];
    let mut b0 = vec![0f32; h0];
    for (p, &(i, j)) in pairs.iter().enumerate() {
        let diff: Vec<f32> = centroids[i].iter().zip(&centroids[j]).map(|(a, b)| a - b).collect();
        let sep = sq(&diff);
        if !(sep > 0.0) {
            return Err(Error::InvalidConfig(format!("classes {i} and {j} have identical signatures")));
        }
        let a = PAIR_GAIN / sep;
        for (k, d) in diff.iter().enumerate() {
            w0[p * bands + k] = 2.0 * a * d;
        }
        b0[p] = -a * (sq(&centroids[i]) - sq(&centroids[j]));
    }
    w.insert("fc0.weight", Tensor::new(vec![h0, bands], w0)?);
    w.insert("fc0.bias", Tensor::new(vec![h0], b0)?);

    // class k wins when it beats every other class: its signed vote sum is C - 1
    let mut w1 = vec![0f32; h1 * h0];
    let mut b1 = vec![0f32; h1];
    for k in 0..c {
        for (p, &(i, j)) in pairs.iter().enumerate() {
            if i == k {
                w1[k * h0 + p] = DETECT_GAIN;
            } else if j == k {
                w1[k * h0 + p] = -DETECT_GAIN;
            }
        }
        b1[k] = -DETECT_GAIN * (c as f32 - 2.0);
    }
    w.insert("fc1.weight", Tensor::new(vec![h1, h0], w1)?);
    w.insert("fc1.bias", Tensor::new(vec![h1], b1)?);

    let mut w2 = vec![0f32; h2 * h1];
    for k in 0..c {
        w2[k * h1 + k] = DETECT_GAIN;
    }
    w.insert("fc2.weight", Tensor::new(vec![h2, h1], w2)?);
    w.insert("fc2.bias", Tensor::zeros(vec![h2]));

    let mut w3 = vec![0f32; c * h2];
    for k in 0..c {
        w3[k * h2 + k] = LOGIT_SCALE;
    }
    w.insert("fc3.weight", Tensor::new(vec![c, h2], w3)?);
    w.insert("fc3.bias", Tensor::zeros(vec![c]));
    w.check(&graph)?;
    Ok((graph, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infer::container::save_weights;
    use crate::synth::{synth, SceneSpec};

    #[test]
    fn centroid_mlp_classifies_signatures() {
        let sigs = vec![
            vec![0.2f32; 25],
            (0..25).map(|b| 0.1 + 0.02 * b as f32).collect(),
            (0..25).map(|b| 0.6 - 0.02 * b as f32).collect(),
        ];
        let (g, w) = nearest_centroid_mlp(&sigs).unwrap();
        for (k, s) in sigs.iter().enumerate() {
            let x = FeatureMap::new(1, 1, 25, s.iter().map(|v| v * 1.7).collect()).unwrap();
            let p = forward(&g, &w, &x).unwrap();
            assert_eq!(p.argmax_labels(), vec![k as u8]);
            assert!(p.data[k] > 0.99, "{:?}", p.data);
        }
    }

    #[test]
    fn cube_map_layout() {
        let mut cube = HsiCube::zeros(2, 3, 4);
        cube.set(1, 2, 3, 5.0);
        let m = cube_to_map(&cube);
        assert_eq!(m.at(1, 2, 3), 5.0);
    }

    #[test]
    fn run_segment_writes_outputs_and_checks_hash() {
        let scene = synth(&SceneSpec::three_class(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        let (g, w) = nearest_centroid_mlp(&scene.signatures).unwrap();
        save_weights(&d.join("m.sdw"), &g, &w).unwrap();
        io::write_cube(&d.join("cube.hsc"), &scene.cube).unwrap();
        io::write_pgm(&d.join("gt.pgm"), &scene.mask).unwrap();
        let mut m = RunManifest {
            cube: Some(d.join("cube.hsc")),
            model: d.join("m.sdw"),
            gt: Some(d.join("gt.pgm")),
            out_mask: d.join("out/mask.pgm"),
            render: Some(d.join("out/mask.ppm")),
            metrics: Some(d.join("out/metrics.csv")),
            threads: Some(2),
            ..Default::default()
        };
        let out = run_segment(&m).unwrap();
        assert_eq!(out.metrics.unwrap().mean.iou, Some(1.0));
        assert!(d.join("out/mask.ppm").exists());
        assert_eq!(io::read_pgm(&d.join("out/mask.pgm")).unwrap(), out.segmentation.labels);

        m.model_sha256 = Some("00".repeat(32));
        assert!(matches!(run_segment(&m), Err(Error::CorruptContainer { .. })));
        m.model = d.join("missing.sdw");
        let err = run_segment(&m).unwrap_err();
        assert!(err.to_string().contains("missing.sdw"));
    }
}
