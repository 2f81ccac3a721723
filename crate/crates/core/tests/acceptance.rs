//! Acceptance suite. Runs every criterion in sequence, prints one PASS/FAIL
//! line each, and exits non-zero if any failed.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use specdrive::bench::{bench_preprocess, BenchConfig};
use specdrive::infer::graph::GraphBuilder;
use specdrive::infer::kernels::{self, reference};
use specdrive::infer::FloatModel;
use specdrive::infer::{
    build_mlp, build_unet, count_flops, count_params, fold_batchnorm, forward, random_weights, save_weights,
    Architecture, LayerKind, UNetConfig,
};
use specdrive::io;
use specdrive::metrics::{accumulate, compute_metrics, inverse_frequency_weights, ClassWeights, ConfusionMatrix};
use specdrive::mosaic::{preprocess_pipeline, PreprocessOptions};
use specdrive::patchwork::{build_grid, default_grid, extract_patches, overlap_index};
use specdrive::pipeline::{nearest_centroid_mlp, quantize_on_cube, run_segment, segment_cube, Model, RunManifest};
use specdrive::quant::{calibrate, qforward, quant_report, quantize_graph, size_report};
use specdrive::spectra::{bhattacharyya, jm_from_bhattacharyya};
use specdrive::synth::{recovery_error, synth, SceneSpec};
use specdrive::{FeatureMap, LabelMask, Plane};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);
type Gaussian = (DVector<f64>, DMatrix<f64>);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(elapsed: Duration, limit_s: f64) -> Outcome {
    if elapsed.as_secs_f64() < limit_s {
        Ok(format!("{:.2} s", elapsed.as_secs_f64()))
    } else {
        Err(format!("took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64()))
    }
}

fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> FeatureMap {
    FeatureMap::new(h, w, c, (0..h * w * c).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

fn max_diff(a: &FeatureMap, b: &FeatureMap) -> f32 {
    assert_eq!(a.shape(), b.shape());
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

fn c1_unet_params() -> Outcome {
    let t = Instant::now();
    let g = build_unet(&UNetConfig {
        patch_size: 128,
        encoder_depth: 2,
        initial_filters: 8,
        in_channels: 25,
        classes: 3,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let p = count_params(&g);
    ensure!(p.total == 31_707, "total {}", p.total);
    ensure!(p.non_trainable == 320, "non-trainable {}", p.non_trainable);
    let time = within(t.elapsed(), 1.0)?;
    Ok(format!("31707 params, 320 non-trainable, {time}"))
}

fn c2_mlp_params() -> Outcome {
    let g = build_mlp(25, 3).map_err(|e| e.to_string())?;
    let p = count_params(&g).total;
    ensure!(p == 13_653, "total {p}");
    Ok("13653 params".into())
}

fn c3_flops() -> Outcome {
    let g = build_unet(&UNetConfig::default()).map_err(|e| e.to_string())?;
    let c = count_flops(&g, 18).map_err(|e| e.to_string())?;
    ensure!(c.flops_per_patch == 2 * c.macs_per_patch, "flops {} != 2 x macs {}", c.flops_per_patch, c.macs_per_patch);
    let rel = (c.flops_per_patch as f64 - 259.9e6) / 259.9e6;
    ensure!(rel.abs() <= 0.15, "flops per patch {} off by {:.1}%", c.flops_per_patch, 100.0 * rel);
    ensure!(c.flops_per_image == 18 * c.flops_per_patch, "per image {}", c.flops_per_image);
    Ok(format!("{} per patch ({:+.1}% vs 259.9M), {} per image", c.flops_per_patch, 100.0 * rel, c.flops_per_image))
}

fn c4_tiling() -> Outcome {
    let t = Instant::now();
    let g = build_grid((216, 409), 128, 44, 57).map_err(|e| e.to_string())?;
    ensure!(g.patch_count() == 18, "{} patches", g.patch_count());
    ensure!(g.row_starts == [0, 44, 88], "rows {:?}", g.row_starts);
    ensure!(g.col_starts.len() == 6, "cols {:?}", g.col_starts);
    let n = g.col_starts.len();
    for i in 0..n {
        ensure!(
            g.col_starts[i] + g.col_starts[n - 1 - i] == 409 - 128,
            "columns not centrosymmetric: {:?}",
            g.col_starts
        );
    }
    let oi = overlap_index(&g).map_err(|e| e.to_string())?;
    let mut brute = vec![0u32; 216 * 409];
    for &r in &g.row_starts {
        for &c in &g.col_starts {
            for y in r..r + 128 {
                for x in c..c + 128 {
                    brute[y * 409 + x] += 1;
                }
            }
        }
    }
    ensure!(brute.iter().all(|&v| v >= 1), "uncovered pixels");
    ensure!(oi.counts == Plane::new(409, 216, brute).unwrap(), "overlap index differs from brute force");
    let time = within(t.elapsed(), 1.0)?;
    Ok(format!("3x6 grid, cols {:?}, {time}", g.col_starts))
}

fn c5_demosaic() -> Outcome {
    let t = Instant::now();
    let scenes = 100;
    let (mut worst_i, mut worst_b) = (0f32, 0f32);
    for seed in 0..scenes {
        let spec = if seed % 10 == 0 {
            SceneSpec { gradient: 0.0, ..SceneSpec::smooth(seed) }
        } else {
            SceneSpec::smooth(seed)
        };
        let scene = synth(&spec).map_err(|e| e.to_string())?;
        let mut first = None;
        for threads in [1, 2, 4, 8] {
            let opts = PreprocessOptions { threads, ..Default::default() };
            let out = preprocess_pipeline(&scene.raw, &scene.refs, &scene.layout, &opts).map_err(|e| e.to_string())?;
            match &first {
                None => {
                    let (i, b) = recovery_error(&scene.cube, &out.cube).map_err(|e| e.to_string())?;
                    worst_i = worst_i.max(i);
                    worst_b = worst_b.max(b);
                    ensure!(i <= 1e-5 && b <= 5e-3, "seed {seed}: interior {i:.2e}, border {b:.2e}");
                    first = Some(out.cube);
                }
                Some(c) => ensure!(
                    c.data.iter().map(|v| v.to_bits()).eq(out.cube.data.iter().map(|v| v.to_bits())),
                    "seed {seed}: {threads} threads differ from 1"
                ),
            }
        }
    }
    let time = within(t.elapsed(), 60.0)?;
    Ok(format!(
        "{scenes} scenes, worst interior {worst_i:.2e}, border {worst_b:.2e}, threads 1/2/4/8 bitwise equal, {time}"
    ))
}

fn c6_kernels() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let instances = 50;
    let mut worst = 0f32;
    for _ in 0..instances {
        let (h, w) = (rng.random_range(1..12), rng.random_range(1..12));
        let (cin, cout) = (rng.random_range(1..9), rng.random_range(1..9));
        let x = random_map(&mut rng, h, w, cin);
        let bias = random_vec(&mut rng, cout);

        let k3 = random_vec(&mut rng, cout * 9 * cin);
        worst = worst.max(max_diff(&kernels::conv2d(&x, &k3, &bias, 3), &reference::conv2d(&x, &k3, &bias, 3)));

        let k2 = random_vec(&mut rng, cout * 4 * cin);
        worst = worst.max(max_diff(&kernels::upconv2(&x, &k2, &bias), &reference::upconv2(&x, &k2, &bias)));

        let xe = random_map(&mut rng, 2 * h, 2 * w, cin);
        worst = worst.max(max_diff(&kernels::maxpool2(&xe), &reference::maxpool2(&xe)));

        let kd = random_vec(&mut rng, cout * cin);
        worst = worst.max(max_diff(&kernels::dense(&x, &kd, &bias), &reference::dense(&x, &kd, &bias)));
    }
    ensure!(worst <= 1e-5, "max element difference {worst:.3e}");
    Ok(format!("{instances} instances per kernel, max difference {worst:.1e}"))
}

fn c7_quantization() -> Outcome {
    // Weight round trip on the folded reference models.
    let mut tensors = 0;
    for (g, seed) in [(build_unet(&UNetConfig::default()).unwrap(), 7), (build_mlp(25, 3).unwrap(), 8)] {
        let w = random_weights(&g, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = random_map(&mut rng, g.input_shape.0, g.input_shape.1, g.input_shape.2);
        let ranges = calibrate(&g, &w, &[input]).map_err(|e| e.to_string())?;
        let q = quantize_graph(&g, &w, &ranges).map_err(|e| e.to_string())?;
        let (_, fw) = fold_batchnorm(&g, &w).map_err(|e| e.to_string())?;
        for (name, qt) in &q.weights {
            let f = fw.get(name).map_err(|e| e.to_string())?;
            let s = qt.scheme.scale;
            for (&code, &v) in qt.data.iter().zip(&f.data) {
                let err = (qt.scheme.dequantize(code) - v).abs();
                // One ulp of slack for the f32 product in dequantize.
                ensure!(err <= s / 2.0 + f32::EPSILON * v.abs(), "{name}: error {err:.3e} > scale/2 {:.3e}", s / 2.0);
            }
            tensors += 1;
        }
    }

    // Random single layers against float forward.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let layers = 120;
    let mut worst_ratio = 0f64;
    for i in 0..layers {
        let (h, w) = (2 * rng.random_range(1..6), 2 * rng.random_range(1..6));
        let (cin, cout) = (rng.random_range(1..8), rng.random_range(1..8));
        let kind = match i % 4 {
            0 => LayerKind::Conv { kernel: 3 },
            1 => LayerKind::Conv { kernel: 1 },
            2 => LayerKind::UpConv2,
            _ => LayerKind::Dense,
        };
        let mut b = GraphBuilder::new(cin);
        b.push("l", kind.clone(), 0, cout);
        let g = b.finish(Architecture::Custom, (h, w, cin)).map_err(|e| e.to_string())?;
        let wts = random_weights(&g, 1000 + i as u64);
        let x = random_map(&mut rng, h, w, cin);
        let ranges = calibrate(&g, &wts, std::slice::from_ref(&x)).map_err(|e| e.to_string())?;
        let q = quantize_graph(&g, &wts, &ranges).map_err(|e| e.to_string())?;
        let want = forward(&g, &wts, &x).map_err(|e| e.to_string())?;
        let got = qforward(&q, &x).map_err(|e| e.to_string())?;
        let s_out = q.schemes.last().copied().flatten().ok_or("output not quantized")?.scale as f64;
        let mean =
            want.data.iter().zip(&got.data).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / want.data.len() as f64;
        worst_ratio = worst_ratio.max(mean / s_out);
        ensure!(mean <= 2.0 * s_out, "layer {i} ({kind:?}): mean error {mean:.3e} > 2 s_out {:.3e}", 2.0 * s_out);
    }

    // Payload size of the reference U-Net.
    let g = build_unet(&UNetConfig::default()).unwrap();
    let w = random_weights(&g, 0);
    let scene = synth(&SceneSpec::three_class(0)).map_err(|e| e.to_string())?;
    let grid = default_grid();
    let patches = extract_patches(&scene.cube, &grid).map_err(|e| e.to_string())?;
    let ranges = calibrate(&g, &w, &patches).map_err(|e| e.to_string())?;
    let q = quantize_graph(&g, &w, &ranges).map_err(|e| e.to_string())?;
    let size = size_report(&g, &q);
    ensure!(size.ratio <= 0.30, "size ratio {:.3}", size.ratio);

    // Argmax agreement: the constructed classifier through the full
    // segmentation path, and the reference U-Net on its probes.
    let mut agree = Vec::new();
    for seed in 0..3 {
        let scene = synth(&SceneSpec::three_class(100 + seed)).map_err(|e| e.to_string())?;
        let (mg, mw) = nearest_centroid_mlp(&scene.signatures).map_err(|e| e.to_string())?;
        let fm = FloatModel { graph: mg, weights: mw };
        let qm = quantize_on_cube(&fm, &scene.cube, &grid).map_err(|e| e.to_string())?;
        let a = segment_cube(&scene.cube, &Model::Float(fm), &grid).map_err(|e| e.to_string())?.labels;
        let b = segment_cube(&scene.cube, &Model::Quantized(qm), &grid).map_err(|e| e.to_string())?.labels;
        agree.push(fraction_equal(&a, &b));
    }
    let unet = quant_report(&g, &w, &q, &patches).map_err(|e| e.to_string())?.argmax_agreement;
    let worst_mlp = agree.iter().copied().fold(1.0, f64::min);
    ensure!(worst_mlp >= 0.95, "constructed classifier agreement {:.2}%", 100.0 * worst_mlp);
    ensure!(unet >= 0.95, "U-Net agreement {:.2}%", 100.0 * unet);
    Ok(format!(
        "{tensors} weight tensors within scale/2; {layers} layers, worst mean error {worst_ratio:.2} s_out; size ratio {:.3}; argmax agreement {:.2}% (classifier), {:.2}% (U-Net)",
        size.ratio,
        100.0 * worst_mlp,
        100.0 * unet
    ))
}

fn fraction_equal(a: &LabelMask, b: &LabelMask) -> f64 {
    let same = a.data.iter().zip(&b.data).filter(|(x, y)| x == y).count();
    same as f64 / a.data.len() as f64
}

fn c8_metrics() -> Outcome {
    let gt = Plane::new(4, 1, vec![0u8, 0, 1, 1]).unwrap();
    let pred = Plane::new(4, 1, vec![0u8, 1, 1, 1]).unwrap();
    let cm = accumulate(&gt, &pred, 2, 255).map_err(|e| e.to_string())?;
    ensure!(cm == ConfusionMatrix::from_rows(&[vec![1, 1], vec![0, 2]]).unwrap(), "toy matrix {cm:?}");
    let r = compute_metrics(&cm, &ClassWeights::FromMatrix).map_err(|e| e.to_string())?;
    let c0 = &r.per_class[0].scores;
    let c1 = &r.per_class[1].scores;
    ensure!(c0.recall == Some(0.5) && c0.precision == Some(1.0) && c0.iou == Some(0.5), "class 0 {c0:?}");
    ensure!(c1.recall == Some(1.0) && c1.precision == Some(2.0 / 3.0) && c1.iou == Some(2.0 / 3.0), "class 1 {c1:?}");

    let diag = ConfusionMatrix::from_rows(&[vec![5, 0, 0], vec![0, 7, 0], vec![0, 0, 1]]).unwrap();
    let r = compute_metrics(&diag, &ClassWeights::FromMatrix).map_err(|e| e.to_string())?;
    let all = r.per_class.iter().map(|c| c.scores).chain([r.overall, r.mean, r.weighted]);
    for s in all {
        ensure!(s.recall == Some(1.0) && s.precision == Some(1.0) && s.iou == Some(1.0), "diagonal scores {s:?}");
    }

    let freqs = [59.56, 3.38, 37.06];
    let cm = ConfusionMatrix::from_rows(&[vec![900, 60, 40], vec![10, 70, 20], vec![30, 15, 455]]).unwrap();
    let r = compute_metrics(&cm, &ClassWeights::Frequencies(freqs.to_vec())).map_err(|e| e.to_string())?;
    let inv: Vec<f64> = freqs.iter().map(|f| 1.0 / (f / 100.0)).collect();
    let z: f64 = inv.iter().sum();
    let w: Vec<f64> = inv.iter().map(|v| v / z).collect();
    let rows = [[900.0, 60.0, 40.0], [10.0, 70.0, 20.0], [30.0, 15.0, 455.0]];
    let (mut wr, mut wp, mut wi) = (0.0, 0.0, 0.0);
    for i in 0..3 {
        let tp = rows[i][i];
        let support: f64 = rows[i].iter().sum();
        let predicted: f64 = rows.iter().map(|r| r[i]).sum();
        wr += w[i] * tp / support;
        wp += w[i] * tp / predicted;
        wi += w[i] * tp / (support + predicted - tp);
    }
    let lib_w = inverse_frequency_weights(&freqs);
    for i in 0..3 {
        ensure!(
            (lib_w[i] - w[i]).abs() <= 1e-12 && (r.weights[i] - w[i]).abs() <= 1e-12,
            "weight {i}: {} vs {}",
            r.weights[i],
            w[i]
        );
    }
    let ws = r.weighted;
    for (name, got, want) in [("recall", ws.recall, wr), ("precision", ws.precision, wp), ("iou", ws.iou, wi)] {
        let got = got.ok_or(format!("weighted {name} missing"))?;
        ensure!((got - want).abs() <= 1e-12, "weighted {name} {got} vs {want}");
    }
    Ok(format!("toy and diagonal matrices exact; weights {:.6}/{:.6}/{:.6}, weighted IoU {:.6}", w[0], w[1], w[2], wi))
}

fn c9_jm() -> Outcome {
    let gauss = |m: &[f64], c: &[f64]| {
        let d = m.len();
        (DVector::from_column_slice(m), DMatrix::from_row_slice(d, d, c))
    };
    let jm = |a: &Gaussian, b: &Gaussian| -> Result<f64, String> {
        Ok(jm_from_bhattacharyya(bhattacharyya(&a.0, &a.1, &b.0, &b.1).map_err(|e| e.to_string())?))
    };
    let g = gauss(&[0.3, -1.0, 2.0], &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5]);
    let same = jm(&g, &g)?;
    ensure!(same.abs() <= 1e-12, "identical Gaussians give {same}");

    let want = 2.0 * (1.0 - (-0.5f64).exp());
    let got = jm(&gauss(&[0.0], &[1.0]), &gauss(&[2.0], &[1.0]))?;
    ensure!((got - want).abs() <= 1e-9, "1-D case {got} vs {want}");

    let mut prev = -1.0;
    for i in 0..20 {
        let d = 0.25 * i as f64;
        let v = jm(&gauss(&[0.0, 0.0], &[1.0, 0.2, 0.2, 1.5]), &gauss(&[d, 0.5 * d], &[1.2, -0.1, -0.1, 0.8]))?;
        ensure!(v > prev, "not increasing at step {i}: {v} after {prev}");
        ensure!((0.0..=2.0).contains(&v), "out of range {v}");
        prev = v;
    }
    Ok(format!("identical {same:.1e}, 1-D {got:.12} (want {want:.12}), 20-point sweep increasing"))
}

fn c10_end_to_end() -> Outcome {
    let t = Instant::now();
    let scene = synth(&SceneSpec::three_class(10)).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let (g, w) = nearest_centroid_mlp(&scene.signatures).map_err(|e| e.to_string())?;
    let io_err = |e: specdrive::Error| e.to_string();
    save_weights(&d.join("model.sdw"), &g, &w).map_err(io_err)?;
    io::write_raw(&d.join("raw.u16"), &scene.raw, &scene.layout.id).map_err(io_err)?;
    io::write_raw(&d.join("dark.u16"), &scene.refs.dark, &scene.layout.id).map_err(io_err)?;
    io::write_raw(&d.join("white.u16"), &scene.refs.white, &scene.layout.id).map_err(io_err)?;
    io::write_layout(&d.join("layout.json"), &scene.layout).map_err(io_err)?;
    io::write_grid(&d.join("grid.json"), &default_grid()).map_err(io_err)?;
    io::write_pgm(&d.join("gt.pgm"), &scene.mask).map_err(io_err)?;
    let m = RunManifest {
        raw: Some(d.join("raw.u16")),
        dark: Some(d.join("dark.u16")),
        white: Some(d.join("white.u16")),
        layout: Some(d.join("layout.json")),
        grid: Some(d.join("grid.json")),
        model: d.join("model.sdw"),
        gt: Some(d.join("gt.pgm")),
        out_mask: d.join("mask.pgm"),
        metrics: Some(d.join("metrics.csv")),
        ..Default::default()
    };
    let out = run_segment(&m).map_err(io_err)?;
    let r = out.metrics.ok_or("no metrics")?;
    for c in &r.per_class {
        ensure!(c.scores.iou == Some(1.0), "class {} IoU {:?}", c.class, c.scores.iou);
    }
    ensure!(r.mean.iou == Some(1.0), "mean IoU {:?}", r.mean.iou);
    let scored = scene.mask.data.iter().filter(|&&v| v != specdrive::IGNORE_LABEL).count();
    let time = within(t.elapsed(), 30.0)?;
    Ok(format!("raw frame to metrics, IoU 1.0 on {scored} interior pixels, {time}"))
}

fn c11_not_reproducible() -> Outcome {
    // Dataset accuracy and hardware latency tables cannot be checked here.
    // What stands in for them is the determinism gate: every timed
    // configuration has to produce the same cube before timings are reported.
    let scene = synth(&SceneSpec::smooth(11)).map_err(|e| e.to_string())?;
    let cfg = BenchConfig {
        iterations: 1,
        warmup: 0,
        threads: vec![1, 4],
        vectorized: vec![false, true],
        ..Default::default()
    };
    let rep = bench_preprocess(&cfg, &scene.raw, &scene.refs, &scene.layout).map_err(|e| e.to_string())?;
    ensure!(rep.runs.len() == 4, "{} runs", rep.runs.len());
    Ok("dataset accuracy and absolute latency/power tables NOT reproducible at desk scale (need the real dataset, trained weights, target hardware); substitute determinism gate passed on 4 configurations".into())
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("U-Net parameter count", c1_unet_params),
        ("MLP parameter count", c2_mlp_params),
        ("FLOP accounting", c3_flops),
        ("tiling geometry", c4_tiling),
        ("demosaicing round trip", c5_demosaic),
        ("kernel oracle equivalence", c6_kernels),
        ("quantization bounds", c7_quantization),
        ("metrics correctness", c8_metrics),
        ("JM properties", c9_jm),
        ("end-to-end constructive segmentation", c10_end_to_end),
        ("desk-scale reproducibility", c11_not_reproducible),
    ];
    let mut failed = 0;
    let out = std::io::stdout();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or(p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let line = match &res {
            Ok(msg) => format!("criterion {:>2} PASS  {name}: {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                format!("criterion {:>2} FAIL  {name}: {msg}", i + 1)
            }
        };
        let _ = writeln!(out.lock(), "{line}");
    }
    let _ = writeln!(out.lock(), "acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
