use serde::{Deserialize, Serialize};

/// Smallest half-width a calibrated range is widened to.
pub const MIN_HALF_SPAN: f32 = 1e-3;

pub const QMIN: i32 = -128;
pub const QMAX: i32 = 127;

/// Affine int8 mapping `x = scale * (q - zero_point)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantScheme {
    pub scale: f32,
    pub zero_point: i32,
}

/// Rounds half away from zero.
#[inline]
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

#[inline]
pub fn saturate_i8(q: i64) -> i8 {
    q.clamp(QMIN as i64, QMAX as i64) as i8
}

impl QuantScheme {
    /// Symmetric weight scheme (`zero_point = 0`) covering `[-max_abs, max_abs]`
    /// with the integer range `[-127, 127]`.
    pub fn symmetric(max_abs: f32) -> Self {
        let m = if max_abs.is_finite() && max_abs > 0.0 { max_abs } else { MIN_HALF_SPAN };
        QuantScheme { scale: m / 127.0, zero_point: 0 }
    }

    pub fn symmetric_for(values: &[f32]) -> Self {
        Self::symmetric(values.iter().fold(0f32, |m, v| m.max(v.abs())))
    }

    /// Asymmetric activation scheme. The range is extended to contain 0 so
    /// that zero is exactly representable, and widened to at least
    /// `±MIN_HALF_SPAN` around its centre when it collapses.
    pub fn from_range(min: f32, max: f32) -> Self {
        let (mut lo, mut hi) = (min.min(max), min.max(max));
        if hi - lo < 2.0 * MIN_HALF_SPAN {
            let mid = 0.5 * (lo + hi);
            lo = mid - MIN_HALF_SPAN;
            hi = mid + MIN_HALF_SPAN;
        }
        lo = lo.min(0.0);
        hi = hi.max(0.0);
        let scale = ((hi as f64 - lo as f64) / 255.0) as f32;
        let zp = round_half_away(QMIN as f64 - lo as f64 / scale as f64) as i64;
        QuantScheme { scale, zero_point: zp.clamp(QMIN as i64, QMAX as i64) as i32 }
    }

    #[inline]
    pub fn quantize(&self, x: f32) -> i8 {
        let q = round_half_away(x as f64 / self.scale as f64) as i64 + self.zero_point as i64;
        saturate_i8(q)
    }

    #[inline]
    pub fn dequantize(&self, q: i8) -> f32 {
        ((q as i32 - self.zero_point) as f64 * self.scale as f64) as f32
    }

    /// Real interval covered by the int8 range.
    pub fn representable(&self) -> (f32, f32) {
        (self.dequantize(QMIN as i8), self.dequantize(QMAX as i8))
    }

    pub fn quantize_slice(&self, xs: &[f32]) -> Vec<i8> {
        xs.iter().map(|&x| self.quantize(x)).collect()
    }

    pub fn dequantize_slice(&self, qs: &[i8]) -> Vec<f32> {
        qs.iter().map(|&q| self.dequantize(q)).collect()
    }
}

/// Maps int32 accumulators to int8 with the real multiplier
/// `s_in * s_w / s_out`, rounding half away from zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Requantizer {
    pub multiplier: f64,
    pub zero_point: i32,
    /// Lowest output code, raised to the zero point for fused ReLU.
    pub floor: i32,
}

impl Requantizer {
    pub fn new(in_scale: f64, out: QuantScheme, relu: bool) -> Self {
        Requantizer {
            multiplier: in_scale / out.scale as f64,
            zero_point: out.zero_point,
            floor: if relu { out.zero_point } else { QMIN },
        }
    }

    #[inline]
    pub fn apply(&self, acc: i32) -> i8 {
        let q = round_half_away(acc as f64 * self.multiplier) as i64 + self.zero_point as i64;
        q.clamp(self.floor as i64, QMAX as i64) as i8
    }
}
