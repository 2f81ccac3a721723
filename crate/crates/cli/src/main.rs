//! `specdrive`: command-line front end for the hyperspectral pipeline.
//!
//! Exit codes: 0 success, 1 usage, 2 bad input data, 3 internal failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use specdrive::bench::{bench_inference, bench_preprocess, BenchConfig, BenchReport, InferenceModels};
use specdrive::infer::{
    build_mlp, build_unet, count_flops, count_params, fold_batchnorm, random_weights, save_weights, Architecture,
    FloatModel, UNetConfig,
};
use specdrive::io;
use specdrive::metrics::{accumulate, compute_metrics, ClassWeights};
use specdrive::mosaic::{preprocess_pipeline, MosaicLayout, PreprocessOptions, ReferenceFrames};
use specdrive::parallel::{default_threads, Workers, THREADS_ENV};
use specdrive::patchwork::{build_grid, default_grid, extract_patches, PatchGrid};
use specdrive::pipeline::{load_model, nearest_centroid_mlp, run_segment, Model, RunManifest};
use specdrive::quant::{calibrate, quant_report, quantize_graph, save_quantized, size_report};
use specdrive::spectra::{band_correlation, class_stats, jm_matrix, mode_per_slot, select_bands, PixelSet};
use specdrive::synth::{synth, SceneSpec};
use specdrive::{HsiCube, IGNORE_LABEL};

#[derive(Parser)]
#[command(name = "specdrive", version, about = "Snapshot-mosaic hyperspectral segmentation pipeline")]
struct Cli {
    /// Worker threads for parallel stages.
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a labelled synthetic scene with its raw mosaic and references.
    Synth(SynthArgs),
    /// Convert a raw mosaic frame into a reflectance cube.
    Preprocess(PreprocessArgs),
    /// Segment a cube with a float or int8 model.
    Segment(SegmentArgs),
    /// Calibrate and quantize a float model to int8.
    Quantize(QuantizeArgs),
    /// Latency benchmarks.
    Bench {
        #[arg(value_enum)]
        what: BenchKind,
        #[command(flatten)]
        args: BenchArgs,
    },
    /// Score a predicted mask against ground truth.
    Metrics(MetricsArgs),
    /// Spectral statistics of a labelled cube.
    Spectral {
        #[command(subcommand)]
        what: SpectralCmd,
    },
    /// Print parameter, operation and size figures of a model container.
    ModelInfo {
        model: PathBuf,
        /// Forward passes per image for FCN models.
        #[arg(long, default_value_t = 18)]
        patches: u64,
    },
    /// Write a reference model container.
    InitModel(InitArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scene description (JSON); defaults to the three-class preset.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    raw: PathBuf,
    #[arg(long)]
    dark: PathBuf,
    #[arg(long)]
    white: PathBuf,
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Use the per-pixel reference kernels.
    #[arg(long)]
    no_vector: bool,
    /// Write stage timings as JSON.
    #[arg(long)]
    timings: Option<PathBuf>,
}

#[derive(Args)]
struct SegmentArgs {
    /// Run manifest (JSON); flags override its fields.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    cube: Option<PathBuf>,
    #[arg(long)]
    raw: Option<PathBuf>,
    #[arg(long)]
    dark: Option<PathBuf>,
    #[arg(long)]
    white: Option<PathBuf>,
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    model_sha256: Option<String>,
    /// Quantize a float model on this cube before inference.
    #[arg(long)]
    quantized: bool,
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    render: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long)]
    model: PathBuf,
    /// A cube file or a directory of `.hsc` cubes.
    #[arg(long)]
    calib: PathBuf,
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-layer error and size report (CSV).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchKind {
    Preprocess,
    Infer,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Machine-readable report with the configuration echoed.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Class frequencies for inverse-frequency weights, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "weights")]
    frequencies: Option<Vec<f64>>,
    /// Explicit class weights, comma separated.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SpectralCmd {
    /// Pearson correlation between bands of the labelled pixels.
    Corr(SpectralArgs),
    /// Pairwise class separability.
    Jm(SpectralArgs),
    /// Greedy orthogonal-projection band selection, mode across cubes.
    SelectBands {
        #[arg(short, default_value_t = 3)]
        k: usize,
        #[command(flatten)]
        args: SpectralArgs,
    },
}

#[derive(Args)]
struct SpectralArgs {
    /// One or more cubes; each needs a matching `--gt`.
    #[arg(long, required = true, num_args = 1..)]
    cube: Vec<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    gt: Vec<PathBuf>,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Arch {
    Unet,
    Mlp,
    /// Nearest-centroid MLP built from `--signatures`.
    Centroid,
}

#[derive(Args)]
struct InitArgs {
    #[arg(long, value_enum)]
    arch: Arch,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON list of per-class 25-band signatures (centroid models).
    #[arg(long)]
    signatures: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Problems with how the command was invoked rather than with the data.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<specdrive::Error>() {
        Some(e) if e.is_data_error() => 2,
        Some(_) => 3,
        None => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let threads = cli.threads.unwrap_or_else(default_threads).max(1);
    let workers = Workers::new(threads);
    match workers.install(|| run(cli.cmd, threads)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Cmd, threads: usize) -> Result<()> {
    match cmd {
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Preprocess(a) => cmd_preprocess(a, threads),
        Cmd::Segment(a) => cmd_segment(a, threads),
        Cmd::Quantize(a) => cmd_quantize(a),
        Cmd::Bench { what, args } => cmd_bench(what, args),
        Cmd::Metrics(a) => cmd_metrics(a),
        Cmd::Spectral { what } => cmd_spectral(what),
        Cmd::ModelInfo { model, patches } => cmd_model_info(&model, patches),
        Cmd::InitModel(a) => cmd_init(a),
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => io::read_json::<SceneSpec>(p)?,
        None => SceneSpec::three_class(0),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let scene = synth(&spec)?;
    let d = &a.out;
    io::write_cube(&d.join("cube.hsc"), &scene.cube)?;
    io::write_pgm(&d.join("gt.pgm"), &scene.mask)?;
    io::write_raw(&d.join("raw.u16"), &scene.raw, &scene.layout.id)?;
    io::write_raw(&d.join("dark.u16"), &scene.refs.dark, &scene.layout.id)?;
    io::write_raw(&d.join("white.u16"), &scene.refs.white, &scene.layout.id)?;
    io::write_layout(&d.join("layout.json"), &scene.layout)?;
    io::write_json(&d.join("signatures.json"), &scene.signatures)?;
    io::write_json(&d.join("spec.json"), &spec)?;
    let grid = build_grid((spec.height, spec.width), 128, 44, 57).or_else(|_| {
        let p = spec.height.min(spec.width);
        build_grid((spec.height, spec.width), p, p, p)
    })?;
    io::write_grid(&d.join("grid.json"), &grid)?;
    println!("wrote {}x{} scene with {} classes to {}", spec.height, spec.width, spec.classes, d.display());
    Ok(())
}

fn cmd_preprocess(a: PreprocessArgs, threads: usize) -> Result<()> {
    let (raw, side) = io::read_raw(&a.raw)?;
    let (dark, _) = io::read_raw(&a.dark)?;
    let (white, _) = io::read_raw(&a.white)?;
    let layout = match &a.layout {
        Some(p) => io::read_layout(p)?,
        None => MosaicLayout { id: side.layout_id, ..Default::default() },
    };
    let opts = PreprocessOptions { threads, vectorized: !a.no_vector, ..Default::default() };
    let out = preprocess_pipeline(&raw, &ReferenceFrames { dark, white }, &layout, &opts)?;
    io::write_cube(&a.out, &out.cube)?;
    for (name, d) in &out.timings.stages {
        println!("{name:<24} {:>10.3} ms", d.as_secs_f64() * 1e3);
    }
    println!("{:<24} {:>10.3} ms", "Total", out.timings.total().as_secs_f64() * 1e3);
    let c = out.correction;
    if c.degenerate + c.clipped_high + c.clipped_low > 0 {
        eprintln!(
            "warning: {} degenerate reference pixels, {} clipped high, {} clipped low",
            c.degenerate, c.clipped_high, c.clipped_low
        );
    }
    if let Some(p) = &a.timings {
        let ms: Vec<(String, f64)> =
            out.timings.stages.iter().map(|(n, d)| (n.to_string(), d.as_secs_f64() * 1e3)).collect();
        io::write_json(p, &ms)?;
    }
    Ok(())
}

fn cmd_segment(a: SegmentArgs, threads: usize) -> Result<()> {
    let mut m = match &a.manifest {
        Some(p) => io::read_json::<RunManifest>(p)?,
        None => RunManifest::default(),
    };
    macro_rules! over {
        ($($f:ident),*) => { $( if a.$f.is_some() { m.$f = a.$f.clone(); } )* };
    }
    over!(cube, raw, dark, white, layout, grid, model_sha256, gt, render, metrics);
    if let Some(p) = &a.model {
        m.model = p.clone();
    }
    if let Some(p) = &a.out {
        m.out_mask = p.clone();
    }
    m.quantized |= a.quantized;
    if m.threads.is_none() {
        m.threads = Some(threads);
    }
    if m.model.as_os_str().is_empty() {
        return Err(usage("segment needs --model"));
    }
    if m.out_mask.as_os_str().is_empty() {
        return Err(usage("segment needs --out"));
    }
    if m.cube.is_none() && m.raw.is_none() {
        return Err(usage("segment needs --cube or --raw/--dark/--white"));
    }
    let out = run_segment(&m)?;
    println!("model sha256 {}{}", out.model_sha256, if out.quantized { " (int8)" } else { "" });
    if let Some(r) = &out.metrics {
        let show = |v: Option<f64>| v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_else(|| "-".into());
        println!(
            "overall IoU {}  mean IoU {}  weighted IoU {}",
            show(r.overall.iou),
            show(r.mean.iou),
            show(r.weighted.iou)
        );
        for w in &r.warnings {
            eprintln!("warning: {w}");
        }
    }
    Ok(())
}

/// Cubes from a single file or every `.hsc` file in a directory, sorted.
fn read_cubes(path: &Path) -> Result<Vec<HsiCube>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .with_context(|| format!("reading {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "hsc"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(specdrive::Error::EmptyCalibration.into());
        }
        files.iter().map(|f| io::read_cube(f).map_err(Into::into)).collect()
    } else {
        Ok(vec![io::read_cube(path)?])
    }
}

fn grid_for(path: Option<&PathBuf>, cube: &HsiCube, patch: usize) -> Result<PatchGrid> {
    let g = match path {
        Some(p) => io::read_grid(p)?,
        None if (cube.height, cube.width) == (216, 409) => default_grid(),
        None => {
            let p = patch.min(cube.height).min(cube.width);
            build_grid((cube.height, cube.width), p, p, p)?
        }
    };
    Ok(g.resolve((cube.height, cube.width))?)
}

fn cmd_quantize(a: QuantizeArgs) -> Result<()> {
    let model = match load_model(&a.model)? {
        Model::Float(f) => f,
        Model::Quantized(_) => return Err(usage(format!("{} is already quantized", a.model.display()))),
    };
    let patch = model.graph.input_shape.0;
    let mut patches = Vec::new();
    for cube in read_cubes(&a.calib)? {
        let grid = grid_for(a.grid.as_ref(), &cube, patch)?;
        patches.extend(extract_patches(&cube, &grid)?);
    }
    let ranges = calibrate(&model.graph, &model.weights, &patches)?;
    let q = quantize_graph(&model.graph, &model.weights, &ranges)?;
    save_quantized(&a.out, &q)?;
    let s = size_report(&model.graph, &q);
    println!(
        "{} calibration patches; float {} B, int8 {} B, ratio {:.3}",
        patches.len(),
        s.float_bytes,
        s.quantized_bytes,
        s.ratio
    );
    if let Some(p) = &a.report {
        let rep = quant_report(&model.graph, &model.weights, &q, &patches)?;
        let mut csv = String::from("layer,op,max_abs_error,mean_abs_error\n");
        for l in &rep.layers {
            csv.push_str(&format!("{},{},{:.6e},{:.6e}\n", l.name, l.op, l.max_abs, l.mean_abs));
        }
        csv.push_str(&format!(
            "#float_bytes,{}\n#quantized_bytes,{}\n",
            rep.size.float_bytes, rep.size.quantized_bytes
        ));
        csv.push_str(&format!("#ratio,{:.4}\n#argmax_agreement,{:.6}\n", rep.size.ratio, rep.argmax_agreement));
        io::write_bytes(p, csv.as_bytes())?;
        println!("argmax agreement {:.2}% over {} pixels", 100.0 * rep.argmax_agreement, rep.pixels);
    }
    Ok(())
}

/// Benchmark input file: harness settings plus where the data comes from.
/// Without explicit inputs a synthetic scene is generated.
#[derive(Deserialize, Default)]
#[serde(default)]
struct BenchFile {
    #[serde(flatten)]
    bench: BenchConfig,
    raw: Option<PathBuf>,
    dark: Option<PathBuf>,
    white: Option<PathBuf>,
    layout: Option<PathBuf>,
    scene: Option<SceneSpec>,
    cube: Option<PathBuf>,
    model: Option<PathBuf>,
    grid: Option<PathBuf>,
}

fn cmd_bench(what: BenchKind, a: BenchArgs) -> Result<()> {
    let mut f = match &a.config {
        Some(p) => io::read_json::<BenchFile>(p)?,
        None => BenchFile::default(),
    };
    if let Some(n) = a.iterations {
        f.bench.iterations = n;
    }
    if let Some(n) = a.warmup {
        f.bench.warmup = n;
    }
    let scene = || synth(&f.scene.clone().unwrap_or_else(|| SceneSpec::three_class(0)));
    let report: BenchReport = match what {
        BenchKind::Preprocess => {
            let (raw, refs, layout) = match (&f.raw, &f.dark, &f.white) {
                (Some(r), Some(d), Some(w)) => {
                    let (raw, side) = io::read_raw(r)?;
                    let refs = ReferenceFrames { dark: io::read_raw(d)?.0, white: io::read_raw(w)?.0 };
                    let layout = match &f.layout {
                        Some(p) => io::read_layout(p)?,
                        None => MosaicLayout { id: side.layout_id, ..Default::default() },
                    };
                    (raw, refs, layout)
                }
                (None, None, None) => {
                    let s = scene()?;
                    (s.raw, s.refs, s.layout)
                }
                _ => return Err(usage("bench config needs all of raw, dark and white or none")),
            };
            bench_preprocess(&f.bench, &raw, &refs, &layout)?
        }
        BenchKind::Infer => {
            let model = match &f.model {
                Some(p) => match load_model(p)? {
                    Model::Float(m) => m,
                    Model::Quantized(_) => return Err(usage("bench infer needs a float model")),
                },
                None => {
                    let g = build_unet(&UNetConfig::default())?;
                    let w = random_weights(&g, 0);
                    FloatModel { graph: g, weights: w }
                }
            };
            let cube = match &f.cube {
                Some(p) => io::read_cube(p)?,
                None => scene()?.cube,
            };
            let grid = grid_for(f.grid.as_ref(), &cube, model.graph.input_shape.0)?;
            f.bench.batch = grid.patch_count();
            let patches = extract_patches(&cube, &grid)?;
            let q = if f.bench.int8 {
                let r = calibrate(&model.graph, &model.weights, &patches)?;
                Some(quantize_graph(&model.graph, &model.weights, &r)?)
            } else {
                None
            };
            let models = InferenceModels { graph: &model.graph, weights: &model.weights, quantized: q.as_ref() };
            bench_inference(&f.bench, &models, &grid, &patches)?
        }
    };
    print!("{}", report.to_table());
    if let Some(p) = &a.out {
        io::write_bytes(p, report.to_csv().as_bytes())?;
    }
    if let Some(p) = &a.json {
        io::write_json(p, &report)?;
    }
    Ok(())
}

fn cmd_metrics(a: MetricsArgs) -> Result<()> {
    let gt = io::read_pgm(&a.gt)?;
    let pred = io::read_pgm(&a.pred)?;
    let cm = accumulate(&gt, &pred, a.classes, IGNORE_LABEL)?;
    let weights = match (a.frequencies, a.weights) {
        (Some(f), _) => ClassWeights::Frequencies(f),
        (_, Some(w)) => ClassWeights::Explicit(w),
        _ => ClassWeights::FromMatrix,
    };
    let report = compute_metrics(&cm, &weights)?;
    let csv = report.to_csv(None);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    match &a.out {
        Some(p) => io::write_bytes(p, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn labelled_inputs(a: &SpectralArgs) -> Result<Vec<(HsiCube, specdrive::LabelMask)>> {
    if a.cube.len() != a.gt.len() {
        return Err(usage(format!("{} cubes but {} ground-truth masks", a.cube.len(), a.gt.len())));
    }
    a.cube.iter().zip(&a.gt).map(|(c, g)| Ok((io::read_cube(c)?, io::read_pgm(g)?))).collect()
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => io::write_bytes(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_spectral(what: SpectralCmd) -> Result<()> {
    match what {
        SpectralCmd::Corr(a) => {
            let mut data = Vec::new();
            let mut bands = 0;
            for (cube, gt) in labelled_inputs(&a)? {
                let px = PixelSet::labelled(&cube, &gt)?;
                bands = px.bands;
                data.extend(px.data);
            }
            let r = band_correlation(&PixelSet::new(bands.max(1), data)?)?;
            emit(a.out.as_ref(), &r.to_csv(4))
        }
        SpectralCmd::Jm(a) => {
            let mut total: Option<Vec<specdrive::spectra::ClassStats>> = None;
            for (cube, gt) in labelled_inputs(&a)? {
                let s = class_stats(&cube, &gt, a.classes)?;
                match &mut total {
                    None => total = Some(s),
                    Some(t) => t.iter_mut().zip(&s).for_each(|(x, y)| x.merge(y)),
                }
            }
            let r = jm_matrix(&total.ok_or_else(|| anyhow!("no input cubes"))?, None)?;
            let mut csv = r.matrix.to_csv(4);
            csv.push_str("mean");
            for v in &r.row_mean {
                csv.push(',');
                if let Some(v) = v {
                    csv.push_str(&format!("{v:.4}"));
                }
            }
            csv.push('\n');
            emit(a.out.as_ref(), &csv)
        }
        SpectralCmd::SelectBands { k, args } => {
            let mut per_image = Vec::new();
            let mut csv = String::from("image,");
            csv.push_str(&(0..k).map(|i| format!("slot{i}")).collect::<Vec<_>>().join(","));
            csv.push('\n');
            for ((cube, gt), path) in labelled_inputs(&args)?.iter().zip(&args.cube) {
                let sel = select_bands(&PixelSet::labelled(cube, gt)?, k)?;
                let row: Vec<String> = sel.bands.iter().map(|b| b.to_string()).collect();
                csv.push_str(&format!("{},{}\n", path.display(), row.join(",")));
                per_image.push(sel.bands);
            }
            let mode = mode_per_slot(&per_image);
            csv.push_str(&format!("mode,{}\n", mode.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(",")));
            emit(args.out.as_ref(), &csv)
        }
    }
}

fn cmd_model_info(path: &Path, patches: u64) -> Result<()> {
    let model = load_model(path)?;
    let g = model.graph();
    let per_image = if g.is_pointwise() { 216 * 409 } else { patches };
    let c = count_flops(g, per_image)?;
    println!("model {}", path.display());
    match &g.architecture {
        Architecture::Unet(u) => println!(
            "architecture unet, depth {}, {} initial filters, {}x{} kernels",
            u.encoder_depth, u.initial_filters, u.conv_kernel, u.conv_kernel
        ),
        Architecture::Mlp { .. } => println!("architecture per-pixel mlp"),
        Architecture::Custom => println!("architecture custom, {} layers", g.layers.len()),
    }
    println!("input {}x{}x{}, {} classes", g.input_shape.0, g.input_shape.1, g.input_shape.2, g.out_channels());
    println!("params {} ({} non-trainable)", c.params, c.non_trainable);
    println!("trainable {}", c.trainable);
    println!("macs per patch {}", c.macs_per_patch);
    println!("flops per patch {} ({:.1} M)", c.flops_per_patch, c.flops_per_patch as f64 / 1e6);
    println!("flops per image {} ({} passes, {:.3} G)", c.flops_per_image, per_image, c.flops_per_image as f64 / 1e9);
    match &model {
        Model::Float(m) => {
            println!("float bytes {}", 4 * c.params);
            let (fg, _) = fold_batchnorm(&m.graph, &m.weights)?;
            let biases: u64 = fg.layers.iter().filter(|l| l.kind.is_linear()).map(|l| l.out_ch as u64).sum();
            let folded = count_params(&fg).total;
            println!("int8 estimate bytes {} (batch-norm folded)", folded - biases + 4 * biases);
        }
        Model::Quantized(q) => {
            let (w8, b32, f32s) = q.payload_counts();
            println!("int8 weights {w8}, int32 biases {b32}, real constants {f32s}");
            println!("int8 bytes {}", w8 + 4 * b32 + 4 * f32s);
        }
    }
    Ok(())
}

fn cmd_init(a: InitArgs) -> Result<()> {
    let (g, w) = match a.arch {
        Arch::Unet => {
            let g = build_unet(&UNetConfig::with_classes(a.classes))?;
            let w = random_weights(&g, a.seed);
            (g, w)
        }
        Arch::Mlp => {
            let g = build_mlp(25, a.classes)?;
            let w = random_weights(&g, a.seed);
            (g, w)
        }
        Arch::Centroid => {
            let p = a.signatures.as_ref().ok_or_else(|| usage("--arch centroid needs --signatures"))?;
            let sigs: Vec<Vec<f32>> = io::read_json(p)?;
            nearest_centroid_mlp(&sigs)?
        }
    };
    if g.out_channels() == 0 {
        bail!("model has no outputs");
    }
    save_weights(&a.out, &g, &w)?;
    println!("wrote {} ({} params)", a.out.display(), count_params(&g).total);
    Ok(())
}
