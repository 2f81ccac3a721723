//! Int8 graph construction and integer inference.
//!
//! Linear layers accumulate `(q_x - zp_x) * q_w` in `i32`, add an `i32` bias
//! quantized at scale `s_x * s_w`, and requantize to the output scheme. A
//! ReLU that is the sole consumer of a linear layer is fused: the layer
//! requantizes straight into the ReLU's range and clamps at its zero point.
//! ReLU, max-pooling and dropout run on codes; concat requantizes both
//! inputs; normalization, tanh and softmax dequantize, apply the real
//! function and requantize. The final softmax emits reals.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::fold::fold_batchnorm;
use crate::infer::forward::{band_norm, softmax};
use crate::infer::graph::{LayerKind, ModelGraph};
use crate::infer::weights::Weights;
use crate::quant::calibrate::ActivationRanges;
use crate::quant::scheme::{round_half_away, QuantScheme, Requantizer, QMAX, QMIN};
use crate::tensor::{FeatureMap, Tensor};

/// Largest fan-in (`k * k * in_ch`) the reference networks use is 9 * 32;
/// the worst-case product sum must fit an `i32` with room for the bias.
const _: () = assert!(255i64 * 127 * 9 * 32 < (i32::MAX as i64) / 2);

/// Int8 tensor with its scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTensor {
    pub shape: Vec<usize>,
    pub data: Vec<i8>,
    pub scheme: QuantScheme,
}

/// Int32 bias at scale `s_x * s_w`, zero point 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QBias {
    pub data: Vec<i32>,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantGraph {
    /// Batch-norm-folded structure.
    pub graph: ModelGraph,
    /// Output scheme per layer; `None` only for a real-valued final softmax.
    pub schemes: Vec<Option<QuantScheme>>,
    /// Linear layers whose consuming ReLU is folded into the requantization.
    pub fused_relu: Vec<bool>,
    pub weights: BTreeMap<String, QTensor>,
    pub biases: BTreeMap<String, QBias>,
    /// Real-valued per-channel constants (z-score mean and std).
    pub floats: BTreeMap<String, Tensor>,
}

/// Int8 feature map, channels last.
#[derive(Debug, Clone, PartialEq)]
pub struct QMap {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<i8>,
    pub scheme: QuantScheme,
}

impl QMap {
    pub fn quantize(x: &FeatureMap, scheme: QuantScheme) -> Self {
        QMap { h: x.h, w: x.w, c: x.c, data: scheme.quantize_slice(&x.data), scheme }
    }

    pub fn dequantize(&self) -> FeatureMap {
        FeatureMap { h: self.h, w: self.w, c: self.c, data: self.scheme.dequantize_slice(&self.data) }
    }

    #[inline]
    fn pixel(&self, y: usize, x: usize) -> &[i8] {
        let i = (y * self.w + x) * self.c;
        &self.data[i..i + self.c]
    }
}

/// A layer output during integer inference.
#[derive(Debug, Clone, PartialEq)]
pub enum QValue {
    Q(QMap),
    Real(FeatureMap),
}

impl QValue {
    pub fn to_real(&self) -> FeatureMap {
        match self {
            QValue::Q(q) => q.dequantize(),
            QValue::Real(r) => r.clone(),
        }
    }

    fn shape(&self) -> (usize, usize, usize) {
        match self {
            QValue::Q(q) => (q.h, q.w, q.c),
            QValue::Real(r) => r.shape(),
        }
    }
}

fn fused_relu_flags(graph: &ModelGraph) -> Vec<bool> {
    let consumers = graph.consumers();
    graph
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            l.kind.is_linear() && consumers[i].len() == 1 && graph.layers[consumers[i][0]].kind == LayerKind::Relu
        })
        .collect()
}

/// Folds batch-norm, assigns per-layer schemes from `ranges` and quantizes
/// every linear layer's weights (per-tensor symmetric) and biases.
pub fn quantize_graph(graph: &ModelGraph, weights: &Weights, ranges: &ActivationRanges) -> Result<QuantGraph> {
    let (g, w) = fold_batchnorm(graph, weights)?;
    let fused = fused_relu_flags(&g);
    let consumers = g.consumers();
    let last = g.output();
    let mut schemes: Vec<Option<QuantScheme>> = Vec::with_capacity(g.layers.len());
    for (idx, l) in g.layers.iter().enumerate() {
        let inherit = |schemes: &[Option<QuantScheme>]| -> Result<Option<QuantScheme>> {
            schemes[l.inputs[0]]
                .map(Some)
                .ok_or_else(|| Error::Structure(format!("`{}` consumes a real-valued output", l.name)))
        };
        let from = |name: &str| -> Result<Option<QuantScheme>> {
            let (lo, hi) = ranges.get(name)?;
            Ok(Some(QuantScheme::from_range(lo, hi)))
        };
        let s = match l.kind {
            LayerKind::Relu | LayerKind::MaxPool2 | LayerKind::Dropout { .. } => inherit(&schemes)?,
            LayerKind::Softmax if idx == last => None,
            _ if fused[idx] => from(&g.layers[consumers[idx][0]].name)?,
            _ => from(&l.name)?,
        };
        schemes.push(s);
    }

    let mut qweights = BTreeMap::new();
    let mut biases = BTreeMap::new();
    let mut floats = BTreeMap::new();
    for (idx, l) in g.layers.iter().enumerate() {
        if l.kind == LayerKind::ZScore {
            for p in ["mean", "std"] {
                let name = format!("{}.{p}", l.name);
                floats.insert(name.clone(), w.get(&name)?.clone());
            }
        }
        if !l.kind.is_linear() {
            continue;
        }
        let sx = schemes[l.inputs[0]]
            .ok_or_else(|| Error::Structure(format!("`{}` consumes a real-valued output", l.name)))?;
        let wt = w.get(&format!("{}.weight", l.name))?;
        let ws = QuantScheme::symmetric_for(&wt.data);
        let bias_scale = sx.scale as f64 * ws.scale as f64;
        let fan_in = (wt.len() / l.out_ch) as i64;
        // products never exceed 255 * 127 per tap; keep the bias inside the rest
        let limit = i32::MAX as i64 - fan_in * 255 * 127;
        if limit <= 0 {
            return Err(Error::Structure(format!("`{}` fan-in {fan_in} overflows i32", l.name)));
        }
        let b = w.get(&format!("{}.bias", l.name))?;
        let bq = b
            .data
            .iter()
            .map(|&v| (round_half_away(v as f64 / bias_scale) as i64).clamp(-limit, limit) as i32)
            .collect();
        qweights.insert(
            format!("{}.weight", l.name),
            QTensor { shape: wt.shape.clone(), data: ws.quantize_slice(&wt.data), scheme: ws },
        );
        biases.insert(format!("{}.bias", l.name), QBias { data: bq, scale: bias_scale });
        debug_assert!(schemes[idx].is_some());
    }
    Ok(QuantGraph { graph: g, schemes, fused_relu: fused, weights: qweights, biases, floats })
}

impl QuantGraph {
    pub fn input_scheme(&self) -> QuantScheme {
        self.schemes[0].expect("input is always quantized")
    }

    fn linear_params(&self, name: &str) -> Result<(&QTensor, &QBias)> {
        let w = self
            .weights
            .get(&format!("{name}.weight"))
            .ok_or_else(|| Error::MissingWeights(format!("{name}.weight")))?;
        let b =
            self.biases.get(&format!("{name}.bias")).ok_or_else(|| Error::MissingWeights(format!("{name}.bias")))?;
        Ok((w, b))
    }

    fn float(&self, layer: &str, p: &str) -> Result<&[f32]> {
        let name = format!("{layer}.{p}");
        self.floats.get(&name).map(|t| t.data.as_slice()).ok_or(Error::MissingWeights(name))
    }

    /// Number of int8 weights, int32 biases and real constants.
    pub fn payload_counts(&self) -> (usize, usize, usize) {
        (
            self.weights.values().map(|t| t.data.len()).sum(),
            self.biases.values().map(|b| b.data.len()).sum(),
            self.floats.values().map(Tensor::len).sum(),
        )
    }
}

/// Repacks `[out, taps, in]` int8 weights into `[tap][in][out]` as `i32`.
fn repack_i8(weight: &[i8], out_ch: usize, taps: usize, in_ch: usize) -> Vec<i32> {
    let mut packed = vec![0i32; weight.len()];
    for o in 0..out_ch {
        for t in 0..taps {
            for c in 0..in_ch {
                packed[(t * in_ch + c) * out_ch + o] = weight[(o * taps + t) * in_ch + c] as i32;
            }
        }
    }
    packed
}

#[inline]
fn axpy_i32(acc: &mut [i32], x: i32, w: &[i32]) {
    for (a, &wv) in acc.iter_mut().zip(w) {
        *a += x * wv;
    }
}

fn finish_pixel(acc: &[i32], req: &Requantizer, dst: &mut [i8]) {
    for (d, &a) in dst.iter_mut().zip(acc) {
        *d = req.apply(a);
    }
}

fn qconv(x: &QMap, w: &[i8], bias: &[i32], k: usize, req: Requantizer, out: QuantScheme) -> QMap {
    let (h, wd, cin) = (x.h, x.w, x.c);
    let cout = bias.len();
    let pad = k / 2;
    let packed = repack_i8(w, cout, k * k, cin);
    let zp = x.scheme.zero_point;
    let mut data = vec![0i8; h * wd * cout];
    data.par_chunks_mut(wd * cout).enumerate().for_each(|(y, row)| {
        let mut acc = vec![0i32; cout];
        for (xx, dst) in row.chunks_exact_mut(cout).enumerate() {
            acc.copy_from_slice(bias);
            for ky in 0..k {
                let Some(iy) = (y + ky).checked_sub(pad).filter(|&v| v < h) else { continue };
                for kx in 0..k {
                    let Some(ix) = (xx + kx).checked_sub(pad).filter(|&v| v < wd) else { continue };
                    let px = x.pixel(iy, ix);
                    let taps = &packed[(ky * k + kx) * cin * cout..][..cin * cout];
                    for (c, &q) in px.iter().enumerate() {
                        axpy_i32(&mut acc, q as i32 - zp, &taps[c * cout..(c + 1) * cout]);
                    }
                }
            }
            finish_pixel(&acc, &req, dst);
        }
    });
    QMap { h, w: wd, c: cout, data, scheme: out }
}

fn qupconv(x: &QMap, w: &[i8], bias: &[i32], req: Requantizer, out: QuantScheme) -> QMap {
    let cin = x.c;
    let cout = bias.len();
    let packed = repack_i8(w, cout, 4, cin);
    let zp = x.scheme.zero_point;
    let (oh, ow) = (2 * x.h, 2 * x.w);
    let mut data = vec![0i8; oh * ow * cout];
    data.par_chunks_mut(ow * cout).enumerate().for_each(|(y, row)| {
        let mut acc = vec![0i32; cout];
        for (xx, dst) in row.chunks_exact_mut(cout).enumerate() {
            acc.copy_from_slice(bias);
            let px = x.pixel(y / 2, xx / 2);
            let t = (y % 2) * 2 + (xx % 2);
            let taps = &packed[t * cin * cout..][..cin * cout];
            for (c, &q) in px.iter().enumerate() {
                axpy_i32(&mut acc, q as i32 - zp, &taps[c * cout..(c + 1) * cout]);
            }
            finish_pixel(&acc, &req, dst);
        }
    });
    QMap { h: oh, w: ow, c: cout, data, scheme: out }
}

fn qdense(x: &QMap, w: &[i8], bias: &[i32], req: Requantizer, out: QuantScheme) -> QMap {
    let cin = x.c;
    let cout = bias.len();
    let packed = repack_i8(w, cout, 1, cin);
    let zp = x.scheme.zero_point;
    let mut data = vec![0i8; x.h * x.w * cout];
    let row = x.w.max(1);
    data.par_chunks_mut(cout * row).zip(x.data.par_chunks(cin * row)).for_each(|(orow, irow)| {
        let mut acc = vec![0i32; cout];
        for (dst, px) in orow.chunks_exact_mut(cout).zip(irow.chunks_exact(cin)) {
            acc.copy_from_slice(bias);
            for (c, &q) in px.iter().enumerate() {
                axpy_i32(&mut acc, q as i32 - zp, &packed[c * cout..(c + 1) * cout]);
            }
            finish_pixel(&acc, &req, dst);
        }
    });
    QMap { h: x.h, w: x.w, c: cout, data, scheme: out }
}

fn qmaxpool(x: &QMap) -> QMap {
    let (oh, ow, c) = (x.h / 2, x.w / 2, x.c);
    let mut data = vec![0i8; oh * ow * c];
    data.par_chunks_mut(ow * c).enumerate().for_each(|(y, row)| {
        for (xx, dst) in row.chunks_exact_mut(c).enumerate() {
            let a = x.pixel(2 * y, 2 * xx);
            let b = x.pixel(2 * y, 2 * xx + 1);
            let d = x.pixel(2 * y + 1, 2 * xx);
            let e = x.pixel(2 * y + 1, 2 * xx + 1);
            for ch in 0..c {
                dst[ch] = a[ch].max(b[ch]).max(d[ch]).max(e[ch]);
            }
        }
    });
    QMap { h: oh, w: ow, c, data, scheme: x.scheme }
}

/// Re-expresses codes of one scheme in another.
fn requantize_codes(src: &[i8], from: QuantScheme, to: QuantScheme, dst: &mut [i8]) {
    let m = from.scale as f64 / to.scale as f64;
    for (d, &q) in dst.iter_mut().zip(src) {
        let v = round_half_away((q as i32 - from.zero_point) as f64 * m) as i64 + to.zero_point as i64;
        *d = v.clamp(QMIN as i64, QMAX as i64) as i8;
    }
}

fn qconcat(a: &QMap, b: &QMap, out: QuantScheme) -> QMap {
    let c = a.c + b.c;
    let mut data = vec![0i8; a.h * a.w * c];
    for ((dst, pa), pb) in data.chunks_exact_mut(c).zip(a.data.chunks_exact(a.c)).zip(b.data.chunks_exact(b.c)) {
        requantize_codes(pa, a.scheme, out, &mut dst[..a.c]);
        requantize_codes(pb, b.scheme, out, &mut dst[a.c..]);
    }
    QMap { h: a.h, w: a.w, c, data, scheme: out }
}

/// Applies a real per-pixel function to a dequantized input and stores the
/// result quantized with `out`, or as reals when `out` is `None`.
fn via_real(x: &QValue, out_c: usize, out: Option<QuantScheme>, f: impl Fn(&[f32], &mut [f32]) + Sync) -> QValue {
    let real = x.to_real();
    let mut res = FeatureMap::zeros(real.h, real.w, out_c);
    res.data.par_chunks_mut(out_c).zip(real.data.par_chunks(real.c)).for_each(|(d, s)| f(s, d));
    match out {
        Some(s) => QValue::Q(QMap::quantize(&res, s)),
        None => QValue::Real(res),
    }
}

fn expect_q<'a>(v: &'a QValue, layer: &str) -> Result<&'a QMap> {
    match v {
        QValue::Q(q) => Ok(q),
        QValue::Real(_) => Err(Error::Structure(format!("`{layer}` needs a quantized input"))),
    }
}

fn eval_qlayer(q: &QuantGraph, idx: usize, inputs: &[&QValue]) -> Result<QValue> {
    let l = &q.graph.layers[idx];
    let name = l.name.as_str();
    let out = q.schemes[idx];
    let co = l.out_ch;
    let scheme = || out.ok_or_else(|| Error::Structure(format!("`{name}` has no output scheme")));
    Ok(match l.kind {
        LayerKind::Input => inputs[0].clone(),
        LayerKind::BandNorm => via_real(inputs[0], co, out, band_norm),
        LayerKind::ZScore => {
            let mean = q.float(name, "mean")?;
            let std = q.float(name, "std")?;
            via_real(inputs[0], co, out, |p, o| {
                for i in 0..o.len() {
                    o[i] = (p[i] - mean[i]) / std[i];
                }
            })
        }
        LayerKind::Tanh => via_real(inputs[0], co, out, |p, o| {
            for (d, &v) in o.iter_mut().zip(p) {
                *d = v.tanh();
            }
        }),
        LayerKind::Softmax => via_real(inputs[0], co, out, softmax),
        LayerKind::Conv { .. } | LayerKind::UpConv2 | LayerKind::Dense => {
            let x = expect_q(inputs[0], name)?;
            let (w, b) = q.linear_params(name)?;
            let s = scheme()?;
            let req = Requantizer::new(b.scale, s, q.fused_relu[idx]);
            QValue::Q(match l.kind {
                LayerKind::Conv { kernel } => qconv(x, &w.data, &b.data, kernel, req, s),
                LayerKind::UpConv2 => qupconv(x, &w.data, &b.data, req, s),
                _ => qdense(x, &w.data, &b.data, req, s),
            })
        }
        LayerKind::Relu => {
            let x = expect_q(inputs[0], name)?;
            let zp = x.scheme.zero_point as i8;
            let mut y = x.clone();
            y.data.iter_mut().for_each(|v| *v = (*v).max(zp));
            QValue::Q(y)
        }
        LayerKind::MaxPool2 => QValue::Q(qmaxpool(expect_q(inputs[0], name)?)),
        LayerKind::Dropout { .. } => inputs[0].clone(),
        LayerKind::Concat => {
            let a = expect_q(inputs[0], name)?;
            let b = expect_q(inputs[1], name)?;
            QValue::Q(qconcat(a, b, scheme()?))
        }
        LayerKind::BatchNorm => return Err(Error::Structure(format!("batch-norm `{name}` left in a quantized graph"))),
    })
}

/// Integer inference. `observe(layer, output)` sees every layer output in
/// order; outputs are released after their last consumer unless `keep`.
pub fn qevaluate(
    q: &QuantGraph,
    input: &FeatureMap,
    keep: bool,
    mut observe: impl FnMut(usize, &QValue),
) -> Result<Vec<Option<QValue>>> {
    q.graph.check_input(input.shape())?;
    let consumers = q.graph.consumers();
    let mut remaining: Vec<usize> = consumers.iter().map(Vec::len).collect();
    let mut outputs: Vec<Option<QValue>> = vec![None; q.graph.layers.len()];
    let x0 = QValue::Q(QMap::quantize(input, q.input_scheme()));
    for idx in 0..q.graph.layers.len() {
        let layer = &q.graph.layers[idx];
        let out = if idx == 0 {
            x0.clone()
        } else {
            let ins: Vec<&QValue> = layer
                .inputs
                .iter()
                .map(|&i| {
                    outputs[i].as_ref().ok_or_else(|| Error::Structure(format!("output of layer {i} released early")))
                })
                .collect::<Result<_>>()?;
            eval_qlayer(q, idx, &ins)?
        };
        debug_assert_eq!(out.shape().2, layer.out_ch);
        observe(idx, &out);
        outputs[idx] = Some(out);
        if !keep {
            for &i in &layer.inputs {
                remaining[i] -= 1;
                if remaining[i] == 0 {
                    outputs[i] = None;
                }
            }
        }
    }
    Ok(outputs)
}

/// Quantizes `input`, runs the int8 graph and returns real outputs (class
/// probabilities for the built models).
pub fn qforward(q: &QuantGraph, input: &FeatureMap) -> Result<FeatureMap> {
    let mut outs = qevaluate(q, input, false, |_, _| {})?;
    Ok(outs.pop().flatten().expect("final output retained").to_real())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infer::forward::forward;
    use crate::infer::graph::{build_mlp, build_unet, Architecture, GraphBuilder, UNetConfig};
    use crate::infer::weights::random_weights;
    use crate::quant::calibrate::calibrate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(h: usize, w: usize, c: usize, seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMap::new(h, w, c, (0..h * w * c).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    /// Plain-f64 oracle for a quantized conv: dequantize operands, convolve,
    /// requantize.
    fn oracle_conv(x: &QMap, w: &QTensor, b: &QBias, k: usize, out: QuantScheme) -> Vec<i8> {
        let cout = b.data.len();
        let pad = k as isize / 2;
        let mut res = Vec::new();
        for y in 0..x.h as isize {
            for xx in 0..x.w as isize {
                for o in 0..cout {
                    let mut acc = b.data[o] as f64 * b.scale;
                    for ky in 0..k as isize {
                        for kx in 0..k as isize {
                            let (iy, ix) = (y + ky - pad, xx + kx - pad);
                            if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                continue;
                            }
                            for c in 0..x.c {
                                let qx = x.data[((iy as usize * x.w) + ix as usize) * x.c + c] as i32;
                                let qw = w.data[((o * k + ky as usize) * k + kx as usize) * x.c + c] as i32;
                                acc += (qx - x.scheme.zero_point) as f64
                                    * x.scheme.scale as f64
                                    * qw as f64
                                    * w.scheme.scale as f64;
                            }
                        }
                    }
                    res.push(out.quantize(acc as f32));
                }
            }
        }
        res
    }

    #[test]
    fn integer_conv_matches_dequantized_oracle() {
        let mut g = GraphBuilder::new(3);
        g.push("c", LayerKind::Conv { kernel: 3 }, 0, 4);
        let g = g.finish(Architecture::Custom, (5, 6, 3)).unwrap();
        let w = random_weights(&g, 3);
        let xs = vec![random_map(5, 6, 3, 1)];
        let r = calibrate(&g, &w, &xs).unwrap();
        let q = quantize_graph(&g, &w, &r).unwrap();
        let outs = qevaluate(&q, &xs[0], true, |_, _| {}).unwrap();
        let QValue::Q(x) = outs[0].as_ref().unwrap() else { panic!() };
        let QValue::Q(y) = outs[1].as_ref().unwrap() else { panic!() };
        let want = oracle_conv(x, &q.weights["c.weight"], &q.biases["c.bias"], 3, q.schemes[1].unwrap());
        let off: usize = y.data.iter().zip(&want).filter(|(a, b)| (**a as i32 - **b as i32).abs() > 1).count();
        assert_eq!(off, 0, "codes differ by more than one step");
        // dequantized output close to float output
        let f = forward(&g, &w, &xs[0]).unwrap();
        let err = y.dequantize().max_abs_diff(&f);
        assert!(err < 4.0 * y.scheme.scale, "err {err} scale {}", y.scheme.scale);
    }

    #[test]
    fn relu_is_fused_and_shares_scheme() {
        let g = build_unet(&UNetConfig { patch_size: 16, ..Default::default() }).unwrap();
        let w = random_weights(&g, 2);
        let r = calibrate(&g, &w, &[random_map(16, 16, 25, 4)]).unwrap();
        let q = quantize_graph(&g, &w, &r).unwrap();
        let conv = q.graph.find("enc0.conv0").unwrap();
        let relu = q.graph.find("enc0.relu0").unwrap();
        assert!(q.fused_relu[conv]);
        assert_eq!(q.schemes[conv], q.schemes[relu]);
        assert_eq!(q.schemes[conv].unwrap().zero_point, QMIN);
        assert!(q.schemes[q.graph.output()].is_none());
        assert!(!q.fused_relu[q.graph.find("dec0.upconv").unwrap()]);
    }

    #[test]
    fn unet_int8_tracks_float() {
        let g = build_unet(&UNetConfig { patch_size: 32, ..Default::default() }).unwrap();
        let w = random_weights(&g, 5);
        let calib: Vec<_> = (0..4).map(|s| random_map(32, 32, 25, 10 + s)).collect();
        let r = calibrate(&g, &w, &calib).unwrap();
        let q = quantize_graph(&g, &w, &r).unwrap();
        let x = random_map(32, 32, 25, 99);
        let fp = forward(&g, &w, &x).unwrap();
        let qp = qforward(&q, &x).unwrap();
        assert_eq!(qp.shape(), fp.shape());
        for px in qp.pixels() {
            assert!((px.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        }
        assert!(qp.max_abs_diff(&fp) < 0.2, "{}", qp.max_abs_diff(&fp));
    }

    #[test]
    fn mlp_int8_tracks_float() {
        let g = build_mlp(25, 3).unwrap();
        let w = random_weights(&g, 8);
        let calib = vec![random_map(8, 8, 25, 1)];
        let r = calibrate(&g, &w, &calib).unwrap();
        let q = quantize_graph(&g, &w, &r).unwrap();
        assert!(q.floats.contains_key("zscore.mean"));
        let x = random_map(4, 4, 25, 2);
        let err = qforward(&q, &x).unwrap().max_abs_diff(&forward(&g, &w, &x).unwrap());
        assert!(err < 0.05, "{err}");
    }

    #[test]
    fn missing_range_is_reported() {
        let g = build_mlp(25, 3).unwrap();
        let w = random_weights(&g, 8);
        let mut r = calibrate(&g, &w, &[random_map(2, 2, 25, 1)]).unwrap();
        r.ranges.remove("fc1");
        assert!(matches!(quantize_graph(&g, &w, &r), Err(Error::RangeMissing(n)) if n == "fc1"));
    }

    #[test]
    fn concat_requantizes_into_output_scheme() {
        let a = QuantScheme::from_range(-1.0, 1.0);
        let b = QuantScheme::from_range(0.0, 4.0);
        let o = QuantScheme::from_range(-1.0, 4.0);
        let xa = QMap { h: 1, w: 1, c: 2, data: a.quantize_slice(&[-0.5, 0.75]), scheme: a };
        let xb = QMap { h: 1, w: 1, c: 1, data: b.quantize_slice(&[3.0]), scheme: b };
        let y = qconcat(&xa, &xb, o).dequantize();
        for (got, want) in y.data.iter().zip([-0.5, 0.75, 3.0]) {
            assert!((got - want).abs() <= o.scale + a.scale.max(b.scale), "{got} vs {want}");
        }
    }
}
