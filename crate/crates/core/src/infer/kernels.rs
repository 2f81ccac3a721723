//! Multiply-accumulate kernels.
//!
//! [`reference`] holds direct loop-nest implementations used as oracles.
//! The functions at module level are the production kernels: weights are
//! repacked so the innermost loop runs over contiguous output channels, and
//! output rows are distributed across the worker pool. For every output
//! element both versions add the same products in the same order
//! (kernel row, kernel column, input channel), so they agree bitwise.
//!
//! Weight layouts: conv and up-conv `[out, k, k, in]`, dense `[out, in]`.

use rayon::prelude::*;

use crate::tensor::FeatureMap;

/// Repacks `[out, k, k, in]` (or `[out, in]` with `taps = 1`) into
/// `[tap][in][out]`.
fn repack(weight: &[f32], out_ch: usize, taps: usize, in_ch: usize) -> Vec<f32> {
    let mut packed = vec![0f32; weight.len()];
    for o in 0..out_ch {
        for t in 0..taps {
            for c in 0..in_ch {
                packed[(t * in_ch + c) * out_ch + o] = weight[(o * taps + t) * in_ch + c];
            }
        }
    }
    packed
}

#[inline]
fn axpy(acc: &mut [f32], x: f32, w: &[f32]) {
    for (a, &wv) in acc.iter_mut().zip(w) {
        *a += x * wv;
    }
}

/// "Same" convolution, stride 1, odd square kernel `k`.
pub fn conv2d(input: &FeatureMap, weight: &[f32], bias: &[f32], k: usize) -> FeatureMap {
    let (h, w, cin) = input.shape();
    let cout = bias.len();
    let pad = k / 2;
    let packed = repack(weight, cout, k * k, cin);
    let mut out = FeatureMap::zeros(h, w, cout);
    out.data.par_chunks_mut(w * cout).enumerate().for_each(|(y, row)| {
        for (x, acc) in row.chunks_exact_mut(cout).enumerate() {
            acc.copy_from_slice(bias);
            for ky in 0..k {
                let Some(iy) = (y + ky).checked_sub(pad).filter(|&v| v < h) else { continue };
                for kx in 0..k {
                    let Some(ix) = (x + kx).checked_sub(pad).filter(|&v| v < w) else { continue };
                    let px = input.pixel(iy, ix);
                    let taps = &packed[(ky * k + kx) * cin * cout..][..cin * cout];
                    for (c, &xv) in px.iter().enumerate() {
                        axpy(acc, xv, &taps[c * cout..(c + 1) * cout]);
                    }
                }
            }
        }
    });
    out
}

/// Transposed convolution with kernel 2 and stride 2: every output pixel
/// `(y, x)` receives exactly one input pixel `(y/2, x/2)` through tap
/// `(y%2, x%2)`.
pub fn upconv2(input: &FeatureMap, weight: &[f32], bias: &[f32]) -> FeatureMap {
    let (h, w, cin) = input.shape();
    let cout = bias.len();
    let packed = repack(weight, cout, 4, cin);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = FeatureMap::zeros(oh, ow, cout);
    out.data.par_chunks_mut(ow * cout).enumerate().for_each(|(y, row)| {
        for (x, acc) in row.chunks_exact_mut(cout).enumerate() {
            acc.copy_from_slice(bias);
            let px = input.pixel(y / 2, x / 2);
            let t = (y % 2) * 2 + (x % 2);
            let taps = &packed[t * cin * cout..][..cin * cout];
            for (c, &xv) in px.iter().enumerate() {
                axpy(acc, xv, &taps[c * cout..(c + 1) * cout]);
            }
        }
    });
    out
}

pub fn maxpool2(input: &FeatureMap) -> FeatureMap {
    let (h, w, c) = input.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = FeatureMap::zeros(oh, ow, c);
    out.data.par_chunks_mut(ow * c).enumerate().for_each(|(y, row)| {
        for (x, dst) in row.chunks_exact_mut(c).enumerate() {
            let a = input.pixel(2 * y, 2 * x);
            let b = input.pixel(2 * y, 2 * x + 1);
            let d = input.pixel(2 * y + 1, 2 * x);
            let e = input.pixel(2 * y + 1, 2 * x + 1);
            for ch in 0..c {
                dst[ch] = a[ch].max(b[ch]).max(d[ch]).max(e[ch]);
            }
        }
    });
    out
}

/// Per-pixel fully connected layer.
pub fn dense(input: &FeatureMap, weight: &[f32], bias: &[f32]) -> FeatureMap {
    let (h, w, cin) = input.shape();
    let cout = bias.len();
    let packed = repack(weight, cout, 1, cin);
    let mut out = FeatureMap::zeros(h, w, cout);
    out.data.par_chunks_mut(cout * w.max(1)).zip(input.data.par_chunks(cin * w.max(1))).for_each(|(orow, irow)| {
        for (acc, px) in orow.chunks_exact_mut(cout).zip(irow.chunks_exact(cin)) {
            acc.copy_from_slice(bias);
            for (c, &xv) in px.iter().enumerate() {
                axpy(acc, xv, &packed[c * cout..(c + 1) * cout]);
            }
        }
    });
    out
}

/// Direct single-threaded loop nests.
pub mod reference {
    use crate::tensor::FeatureMap;

    pub fn conv2d(input: &FeatureMap, weight: &[f32], bias: &[f32], k: usize) -> FeatureMap {
        let (h, w, cin) = input.shape();
        let cout = bias.len();
        let pad = k as isize / 2;
        let mut out = FeatureMap::zeros(h, w, cout);
        for y in 0..h {
            for x in 0..w {
                for o in 0..cout {
                    let mut acc = bias[o];
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = y as isize + ky as isize - pad;
                            let ix = x as isize + kx as isize - pad;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for c in 0..cin {
                                let wv = weight[((o * k + ky) * k + kx) * cin + c];
                                acc += input.at(iy as usize, ix as usize, c) * wv;
                            }
                        }
                    }
                    out.set(y, x, o, acc);
                }
            }
        }
        out
    }

    pub fn upconv2(input: &FeatureMap, weight: &[f32], bias: &[f32]) -> FeatureMap {
        let (h, w, cin) = input.shape();
        let cout = bias.len();
        let mut out = FeatureMap::zeros(2 * h, 2 * w, cout);
        // scatter form: each input pixel writes a 2x2 output block
        for iy in 0..h {
            for ix in 0..w {
                for a in 0..2 {
                    for b in 0..2 {
                        for o in 0..cout {
                            let mut acc = bias[o];
                            for c in 0..cin {
                                acc += input.at(iy, ix, c) * weight[((o * 2 + a) * 2 + b) * cin + c];
                            }
                            out.set(2 * iy + a, 2 * ix + b, o, acc);
                        }
                    }
                }
            }
        }
        out
    }

    pub fn maxpool2(input: &FeatureMap) -> FeatureMap {
        let (h, w, c) = input.shape();
        let mut out = FeatureMap::zeros(h / 2, w / 2, c);
        for y in 0..h / 2 {
            for x in 0..w / 2 {
                for ch in 0..c {
                    let mut m = f32::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(input.at(2 * y + dy, 2 * x + dx, ch));
                        }
                    }
                    out.set(y, x, ch, m);
                }
            }
        }
        out
    }

    pub fn dense(input: &FeatureMap, weight: &[f32], bias: &[f32]) -> FeatureMap {
        let (h, w, cin) = input.shape();
        let cout = bias.len();
        let mut out = FeatureMap::zeros(h, w, cout);
        for y in 0..h {
            for x in 0..w {
                for o in 0..cout {
                    let mut acc = bias[o];
                    for c in 0..cin {
                        acc += input.at(y, x, c) * weight[o * cin + c];
                    }
                    out.set(y, x, o, acc);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize, c: usize) -> FeatureMap {
        let data = (0..h * w * c).map(|i| ((i * 37 % 101) as f32 - 50.0) / 25.0).collect();
        FeatureMap { h, w, c, data }
    }

    #[test]
    fn identity_impulse_conv() {
        let input = ramp(6, 7, 1);
        let mut weight = vec![0f32; 9];
        weight[4] = 1.0;
        let out = conv2d(&input, &weight, &[0.0], 3);
        assert_eq!(out, input);
        assert_eq!(reference::conv2d(&input, &weight, &[0.0], 3), input);
    }

    #[test]
    fn conv_matches_triple_loop_on_5x5x2() {
        let input = ramp(5, 5, 2);
        let weight: Vec<f32> = (0..3 * 9 * 2).map(|i| ((i * 13 % 17) as f32 - 8.0) / 10.0).collect();
        let bias = [0.1, -0.2, 0.3];
        let fast = conv2d(&input, &weight, &bias, 3);
        // independent oracle: explicit zero padding then a plain correlation
        let mut padded = vec![0f32; 7 * 7 * 2];
        for y in 0..5 {
            for x in 0..5 {
                for c in 0..2 {
                    padded[((y + 1) * 7 + x + 1) * 2 + c] = input.at(y, x, c);
                }
            }
        }
        for y in 0..5 {
            for x in 0..5 {
                for o in 0..3 {
                    let mut s = bias[o] as f64;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            for c in 0..2 {
                                s += padded[((y + ky) * 7 + x + kx) * 2 + c] as f64
                                    * weight[((o * 3 + ky) * 3 + kx) * 2 + c] as f64;
                            }
                        }
                    }
                    assert!((fast.at(y, x, o) as f64 - s).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn upconv_doubles_and_matches() {
        let input = ramp(3, 4, 3);
        let weight: Vec<f32> = (0..2 * 4 * 3).map(|i| (i as f32 - 12.0) / 7.0).collect();
        let bias = [0.5, -0.5];
        let fast = upconv2(&input, &weight, &bias);
        assert_eq!(fast.shape(), (6, 8, 2));
        assert_eq!(fast, reference::upconv2(&input, &weight, &bias));
    }

    #[test]
    fn pool_and_dense_match_reference() {
        let input = ramp(6, 8, 5);
        assert_eq!(maxpool2(&input), reference::maxpool2(&input));
        let weight: Vec<f32> = (0..4 * 5).map(|i| (i as f32 - 9.0) / 3.0).collect();
        let bias = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(dense(&input, &weight, &bias), reference::dense(&input, &weight, &bias));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn map_and_params(max_out: usize) -> impl Strategy<Value = (FeatureMap, Vec<f32>, Vec<f32>, usize)> {
            (1usize..9, 1usize..9, 1usize..6, 1..max_out, prop::sample::select(vec![1usize, 3, 5])).prop_flat_map(
                |(h, w, cin, cout, k)| {
                    (
                        prop::collection::vec(-2.0f32..2.0, h * w * cin),
                        prop::collection::vec(-1.0f32..1.0, cout * k * k * cin),
                        prop::collection::vec(-1.0f32..1.0, cout),
                    )
                        .prop_map(move |(x, wt, b)| (FeatureMap { h, w, c: cin, data: x }, wt, b, k))
                },
            )
        }

        proptest! {
            #[test]
            fn conv_matches_reference((x, wt, b, k) in map_and_params(7)) {
                prop_assert_eq!(conv2d(&x, &wt, &b, k), reference::conv2d(&x, &wt, &b, k));
            }

            #[test]
            fn upconv_pool_dense_match_reference((x, wt, b, _) in map_and_params(7)) {
                let (cin, cout) = (x.c, b.len());
                let w4: Vec<f32> = (0..cout * 4 * cin).map(|i| wt[i % wt.len()]).collect();
                prop_assert_eq!(upconv2(&x, &w4, &b), reference::upconv2(&x, &w4, &b));
                let wd: Vec<f32> = (0..cout * cin).map(|i| wt[i % wt.len()]).collect();
                prop_assert_eq!(dense(&x, &wd, &b), reference::dense(&x, &wd, &b));
                let even = FeatureMap { h: 2 * x.h, w: 2 * x.w, c: cin, data: x.data.iter().cycle().take(4 * x.data.len()).copied().collect() };
                prop_assert_eq!(maxpool2(&even), reference::maxpool2(&even));
            }
        }
    }
}
