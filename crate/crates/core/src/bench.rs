//! Latency harness for preprocessing and inference.
//!
//! Every configuration is first run once and its output compared bitwise
//! against the first configuration; timing starts only when all agree. The
//! timing loop is single-threaded and excludes file I/O.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::forward::{forward_with, KernelSet};
use crate::infer::graph::ModelGraph;
use crate::infer::weights::Weights;
use crate::mosaic::{
    preprocess_on, MosaicLayout, PreprocessOptions, RawFrame, ReferenceFrames, PREPROCESS_STAGES, STAGE_TOTAL,
};
use crate::parallel::{default_threads, Workers};
use crate::patchwork::{overlap_index, reconstruct, PatchGrid};
use crate::quant::{qforward, QuantGraph};
use crate::tensor::FeatureMap;

pub const STAGE_INFERENCE: &str = "Inference";
pub const STAGE_RECONSTRUCTION: &str = "Reconstruction";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub iterations: usize,
    pub warmup: usize,
    /// Worker counts to sweep.
    pub threads: Vec<usize>,
    /// Kernel variants to sweep: `false` for the reference loops, `true`
    /// for the optimized kernels.
    pub vectorized: Vec<bool>,
    /// Patches per image for inference.
    pub batch: usize,
    /// Include the int8 model in inference runs.
    pub int8: bool,
    /// Optional board power to convert latency into energy.
    pub watts: Option<f64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let n = default_threads();
        BenchConfig {
            iterations: 1000,
            warmup: 10,
            threads: if n > 1 { vec![1, n] } else { vec![1] },
            vectorized: vec![false, true],
            batch: 18,
            int8: true,
            watts: None,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if self.threads.is_empty() || self.threads.contains(&0) {
            return Err(Error::InvalidConfig("thread counts must be at least 1".into()));
        }
        if self.vectorized.is_empty() {
            return Err(Error::InvalidConfig("no kernel variant selected".into()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidConfig("batch must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub name: String,
    pub samples: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    /// Sample standard deviation; absent with fewer than two samples.
    pub stddev_ms: Option<f64>,
}

impl StageStats {
    pub fn from_samples(name: &str, samples: &[Duration]) -> Self {
        let mut ms: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        ms.sort_by(f64::total_cmp);
        let n = ms.len();
        let mean = ms.iter().sum::<f64>() / n.max(1) as f64;
        let median = if n == 0 {
            0.0
        } else if n % 2 == 1 {
            ms[n / 2]
        } else {
            0.5 * (ms[n / 2 - 1] + ms[n / 2])
        };
        // nearest-rank percentile
        let p95 = if n == 0 { 0.0 } else { ms[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1] };
        let stddev = (n >= 2).then(|| (ms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        StageStats {
            name: name.to_string(),
            samples: n,
            mean_ms: mean,
            median_ms: median,
            p95_ms: p95,
            stddev_ms: stddev,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub threads: usize,
    pub vectorized: bool,
    pub stages: Vec<StageStats>,
    /// Sum of stage means.
    pub total_ms: f64,
    pub fps: f64,
    pub joules: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    pub label: String,
    pub baseline: String,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub kind: String,
    pub config: BenchConfig,
    pub runs: Vec<RunReport>,
    pub speedups: Vec<Speedup>,
    pub notes: Vec<String>,
}

/// Throughput of a two-stage pipeline bounded by its slower stage.
pub fn pipeline_fps(preprocess_ms: f64, inference_ms: f64) -> f64 {
    1000.0 / preprocess_ms.max(inference_ms)
}

fn run_report(
    label: String,
    threads: usize,
    vectorized: bool,
    stages: Vec<StageStats>,
    watts: Option<f64>,
) -> RunReport {
    let total_ms: f64 = stages.iter().map(|s| s.mean_ms).sum();
    RunReport {
        label,
        threads,
        vectorized,
        stages,
        total_ms,
        fps: 1000.0 / total_ms,
        joules: watts.map(|w| w * total_ms / 1000.0),
    }
}

fn speedups(runs: &[RunReport]) -> Vec<Speedup> {
    let Some(base) = runs.first() else { return Vec::new() };
    runs.iter()
        .map(|r| Speedup { label: r.label.clone(), baseline: base.label.clone(), speedup: base.total_ms / r.total_ms })
        .collect()
}

fn bits(data: &[f32]) -> impl Iterator<Item = u32> + '_ {
    data.iter().map(|v| v.to_bits())
}

fn same_bits(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && bits(a).eq(bits(b))
}

/// Times the four preprocessing stages for every `(vectorized, threads)`
/// pair. Fails with `NonDeterministicOutput` if any pair produces a cube
/// that differs bitwise from the first.
pub fn bench_preprocess(
    cfg: &BenchConfig,
    frame: &RawFrame,
    refs: &ReferenceFrames,
    layout: &MosaicLayout,
) -> Result<BenchReport> {
    cfg.validate()?;
    let combos: Vec<(bool, usize)> =
        cfg.vectorized.iter().flat_map(|&v| cfg.threads.iter().map(move |&t| (v, t))).collect();
    let label = |v: bool, t: usize| format!("{}/{}t", if v { "vector" } else { "scalar" }, t);
    let pools: Vec<Workers> = combos.iter().map(|&(_, t)| Workers::new(t)).collect();

    let mut reference: Option<Vec<f32>> = None;
    for (&(v, t), pool) in combos.iter().zip(&pools) {
        let opts = PreprocessOptions { threads: t, vectorized: v, ..Default::default() };
        let cube = preprocess_on(pool, frame, refs, layout, &opts)?.cube;
        match &reference {
            None => reference = Some(cube.data),
            Some(r) if !same_bits(r, &cube.data) => {
                return Err(Error::NonDeterministicOutput(format!(
                    "{} differs from {}",
                    label(v, t),
                    label(combos[0].0, combos[0].1)
                )))
            }
            Some(_) => {}
        }
    }

    let mut runs = Vec::new();
    for (&(v, t), pool) in combos.iter().zip(&pools) {
        let opts = PreprocessOptions { threads: t, vectorized: v, ..Default::default() };
        for _ in 0..cfg.warmup {
            preprocess_on(pool, frame, refs, layout, &opts)?;
        }
        let mut samples: Vec<Vec<Duration>> = vec![Vec::with_capacity(cfg.iterations); PREPROCESS_STAGES.len()];
        for _ in 0..cfg.iterations {
            let out = preprocess_on(pool, frame, refs, layout, &opts)?;
            for (i, name) in PREPROCESS_STAGES.iter().enumerate() {
                samples[i].push(out.timings.get(name).unwrap_or_default());
            }
        }
        let stages =
            PREPROCESS_STAGES.iter().zip(&samples).map(|(name, s)| StageStats::from_samples(name, s)).collect();
        runs.push(run_report(label(v, t), t, v, stages, cfg.watts));
    }
    Ok(BenchReport {
        kind: "preprocess".into(),
        config: cfg.clone(),
        speedups: speedups(&runs),
        runs,
        notes: vec![format!("{STAGE_TOTAL} is the sum of stage means; file I/O is excluded")],
    })
}

/// The model variants an inference benchmark can time.
pub struct InferenceModels<'a> {
    pub graph: &'a ModelGraph,
    pub weights: &'a Weights,
    pub quantized: Option<&'a QuantGraph>,
}

/// Times per-image inference (`batch` patches plus reconstruction) for the
/// float model under every kernel/thread pair and, if given, the int8 model
/// under every thread count. Outputs of each family must agree bitwise
/// across configurations.
pub fn bench_inference(
    cfg: &BenchConfig,
    models: &InferenceModels,
    grid: &PatchGrid,
    patches: &[FeatureMap],
) -> Result<BenchReport> {
    cfg.validate()?;
    if patches.is_empty() {
        return Err(Error::InvalidConfig("no patches to benchmark".into()));
    }
    models.weights.check(models.graph)?;
    let grid = grid.resolve(grid.image_size()?)?;
    if grid.patch_count() != cfg.batch {
        return Err(Error::InvalidConfig(format!(
            "batch {} does not match the grid's {} patches",
            cfg.batch,
            grid.patch_count()
        )));
    }
    let oi = overlap_index(&grid)?;
    let batch: Vec<&FeatureMap> = (0..cfg.batch).map(|i| &patches[i % patches.len()]).collect();

    enum Variant {
        Float(KernelSet),
        Int8,
    }
    let mut combos: Vec<(String, Variant, usize, bool)> = Vec::new();
    for &v in &cfg.vectorized {
        for &t in &cfg.threads {
            let ks = if v { KernelSet::Optimized } else { KernelSet::Reference };
            combos.push((format!("f32-{}/{}t", if v { "vector" } else { "scalar" }, t), Variant::Float(ks), t, v));
        }
    }
    if let (true, Some(_)) = (cfg.int8, models.quantized) {
        for &t in &cfg.threads {
            combos.push((format!("int8/{t}t"), Variant::Int8, t, true));
        }
    }

    let infer_once = |variant: &Variant| -> Result<Vec<FeatureMap>> {
        batch
            .iter()
            .map(|p| match variant {
                Variant::Float(ks) => forward_with(models.graph, models.weights, p, *ks),
                Variant::Int8 => qforward(models.quantized.expect("int8 requested"), p),
            })
            .collect()
    };

    let mut float_ref: Option<Vec<f32>> = None;
    let mut int_ref: Option<Vec<f32>> = None;
    let pools: Vec<Workers> = combos.iter().map(|c| Workers::new(c.2)).collect();
    for ((label, variant, _, _), pool) in combos.iter().zip(&pools) {
        let out = pool.install(|| infer_once(variant))?;
        let (probs, _) = reconstruct(&out, &grid, &oi)?;
        let slot = if matches!(variant, Variant::Int8) { &mut int_ref } else { &mut float_ref };
        match slot {
            None => *slot = Some(probs.data),
            Some(r) if !same_bits(r, &probs.data) => {
                return Err(Error::NonDeterministicOutput(format!("{label} differs from the first run of its family")))
            }
            Some(_) => {}
        }
    }

    let mut runs = Vec::new();
    for ((label, variant, t, v), pool) in combos.iter().zip(&pools) {
        for _ in 0..cfg.warmup {
            pool.install(|| infer_once(variant))?;
        }
        let mut inf = Vec::with_capacity(cfg.iterations);
        let mut rec = Vec::with_capacity(cfg.iterations);
        for _ in 0..cfg.iterations {
            let t0 = Instant::now();
            let out = pool.install(|| infer_once(variant))?;
            let t1 = Instant::now();
            pool.install(|| reconstruct(&out, &grid, &oi))?;
            let t2 = Instant::now();
            inf.push(t1 - t0);
            rec.push(t2 - t1);
        }
        let stages =
            vec![StageStats::from_samples(STAGE_INFERENCE, &inf), StageStats::from_samples(STAGE_RECONSTRUCTION, &rec)];
        runs.push(run_report(label.clone(), *t, *v, stages, cfg.watts));
    }
    let per_patch: Vec<String> = runs
        .iter()
        .map(|r| format!("{}: {:.3} ms per patch", r.label, r.stages[0].mean_ms / cfg.batch as f64))
        .collect();
    let mut notes = vec![format!("per image = {} patches + reconstruction; file I/O is excluded", cfg.batch)];
    notes.extend(per_patch);
    if let (Some(f), Some(q)) = (
        runs.iter().filter(|r| r.label.starts_with("f32-vector")).map(|r| r.total_ms).reduce(f64::min),
        runs.iter().filter(|r| r.label.starts_with("int8")).map(|r| r.total_ms).reduce(f64::min),
    ) {
        notes.push(format!("best float / best int8 latency ratio: {:.3}", f / q));
    }
    Ok(BenchReport { kind: "inference".into(), config: cfg.clone(), speedups: speedups(&runs), runs, notes })
}

impl BenchReport {
    /// One row per `(configuration, stage)` plus a total row per configuration.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("config,threads,vectorized,stage,samples,mean_ms,median_ms,p95_ms,stddev_ms,fps,speedup\n");
        for (r, s) in self.runs.iter().zip(&self.speedups) {
            for st in &r.stages {
                out.push_str(&format!(
                    "{},{},{},{},{},{:.4},{:.4},{:.4},{},,\n",
                    r.label,
                    r.threads,
                    r.vectorized,
                    st.name,
                    st.samples,
                    st.mean_ms,
                    st.median_ms,
                    st.p95_ms,
                    st.stddev_ms.map(|v| format!("{v:.4}")).unwrap_or_default()
                ));
            }
            out.push_str(&format!(
                "{},{},{},{STAGE_TOTAL},,{:.4},,,,{:.3},{:.3}\n",
                r.label, r.threads, r.vectorized, r.total_ms, r.fps, s.speedup
            ));
        }
        out
    }

    /// Fixed-width table for terminals.
    pub fn to_table(&self) -> String {
        let mut out =
            format!("{} benchmark, {} iterations ({} warmup)\n", self.kind, self.config.iterations, self.config.warmup);
        for (r, s) in self.runs.iter().zip(&self.speedups) {
            out.push_str(&format!("\n[{}]\n", r.label));
            out.push_str(&format!(
                "  {:<24} {:>10} {:>10} {:>10} {:>10}\n",
                "stage", "mean ms", "median", "p95", "stddev"
            ));
            for st in &r.stages {
                out.push_str(&format!(
                    "  {:<24} {:>10.3} {:>10.3} {:>10.3} {:>10}\n",
                    st.name,
                    st.mean_ms,
                    st.median_ms,
                    st.p95_ms,
                    st.stddev_ms.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into())
                ));
            }
            out.push_str(&format!(
                "  {:<24} {:>10.3}   fps {:.2}   speedup x{:.2}\n",
                STAGE_TOTAL, r.total_ms, r.fps, s.speedup
            ));
            if let Some(j) = r.joules {
                out.push_str(&format!("  energy {j:.4} J per frame\n"));
            }
        }
        for n in &self.notes {
            out.push_str(&format!("\n{n}"));
        }
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infer::graph::{build_unet, UNetConfig};
    use crate::infer::weights::random_weights;
    use crate::patchwork::{build_grid, extract_patches};
    use crate::quant::{calibrate, quantize_graph};
    use crate::synth::{synth, SceneSpec};

    #[test]
    fn stats_of_known_samples() {
        let d: Vec<Duration> = [1, 2, 3, 4].iter().map(|&m| Duration::from_millis(m)).collect();
        let s = StageStats::from_samples("x", &d);
        assert!((s.mean_ms - 2.5).abs() < 1e-9);
        assert!((s.median_ms - 2.5).abs() < 1e-9);
        assert!((s.p95_ms - 4.0).abs() < 1e-9);
        assert!((s.stddev_ms.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-9);
        assert_eq!(StageStats::from_samples("x", &d[..1]).stddev_ms, None);
    }

    #[test]
    fn preprocess_single_iteration_report() {
        let scene = synth(&SceneSpec { height: 40, width: 60, ..SceneSpec::smooth(1) }).unwrap();
        let cfg = BenchConfig { iterations: 1, warmup: 0, threads: vec![1, 2], ..Default::default() };
        let r = bench_preprocess(&cfg, &scene.raw, &scene.refs, &scene.layout).unwrap();
        assert_eq!(r.runs.len(), 4);
        for run in &r.runs {
            let names: Vec<&str> = run.stages.iter().map(|s| s.name.as_str()).collect();
            assert_eq!(names, PREPROCESS_STAGES.to_vec());
            assert!(run.stages.iter().all(|s| s.samples == 1 && s.stddev_ms.is_none()));
            let sum: f64 = run.stages.iter().map(|s| s.mean_ms).sum();
            assert!((run.total_ms - sum).abs() < 1e-9);
            assert!((run.fps - 1000.0 / run.total_ms).abs() < 1e-9);
        }
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 1 + 4 * 5);
        assert!(csv.contains("Translation to center"));
        assert!(r.to_table().contains("Total"));
    }

    #[test]
    fn inference_runs_float_and_int8() {
        let cfg_unet = UNetConfig { patch_size: 16, ..Default::default() };
        let g = build_unet(&cfg_unet).unwrap();
        let w = random_weights(&g, 1);
        let scene = synth(&SceneSpec { height: 24, width: 40, ..SceneSpec::smooth(2) }).unwrap();
        let grid = build_grid((24, 40), 16, 8, 12).unwrap();
        let patches = extract_patches(&scene.cube, &grid).unwrap();
        let q = quantize_graph(&g, &w, &calibrate(&g, &w, &patches).unwrap()).unwrap();
        let cfg = BenchConfig {
            iterations: 2,
            warmup: 0,
            threads: vec![1, 2],
            batch: grid.patch_count(),
            watts: Some(10.0),
            ..Default::default()
        };
        let models = InferenceModels { graph: &g, weights: &w, quantized: Some(&q) };
        let r = bench_inference(&cfg, &models, &grid, &patches).unwrap();
        assert_eq!(r.runs.len(), 6);
        assert!(r.runs.iter().all(|x| x.joules.unwrap() > 0.0));
        assert!(r.notes.iter().any(|n| n.contains("int8")));
        assert!((pipeline_fps(20.0, 50.0) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs() {
        let bad = BenchConfig { iterations: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = BenchConfig { threads: vec![0], ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
