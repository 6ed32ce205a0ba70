use serde::{Deserialize, Serialize};

/// Fixed-point scale, 2^16.
pub const SCALE: f64 = 65536.0;

/// Most clients whose quantized values may be summed without leaving
/// `(-q/2, q/2)`.
pub const MAX_CLIENTS: usize = 1 << 20;

/// Fixed-point vector; values are clamped to the `i32` range, which is
/// `[-2^15, 2^15)` in real units at scale 2^16.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedVector {
    pub values: Vec<i32>,
    /// Inputs that were out of range or not finite.
    pub clamped: usize,
}

impl QuantizedVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Rounds `v * scale` to nearest, ties to even, clamping to the `i32` range.
/// NaN maps to zero and counts as clamped.
pub fn quantize(v: &[f64], scale: f64) -> QuantizedVector {
    let mut clamped = 0;
    let values = v
        .iter()
        .map(|&x| {
            let r = (x * scale).round_ties_even();
            if r.is_nan() {
                clamped += 1;
                0
            } else if r < i32::MIN as f64 {
                clamped += 1;
                i32::MIN
            } else if r > i32::MAX as f64 {
                clamped += 1;
                i32::MAX
            } else {
                r as i32
            }
        })
        .collect();
    QuantizedVector { values, clamped }
}

pub fn dequantize(q: &QuantizedVector, scale: f64) -> Vec<f64> {
    q.values.iter().map(|&v| v as f64 / scale).collect()
}
