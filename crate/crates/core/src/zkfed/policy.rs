use std::collections::BTreeMap;

use ed25519_dalek::VerifyingKey;

use super::quant::{QuantizedVector, SCALE};

/// What the aggregator accepts.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationPolicy {
    /// Largest accepted L2 norm of a dequantized update.
    pub norm_bound: f64,
    /// Registered clients and their keys.
    pub signers: BTreeMap<u32, VerifyingKey>,
}

impl VerificationPolicy {
    pub fn new(norm_bound: f64, signers: BTreeMap<u32, VerifyingKey>) -> Self {
        assert!(norm_bound > 0.0, "norm bound must be positive");
        Self { norm_bound, signers }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyCheck {
    pub pass: bool,
    pub norm: f64,
}

pub fn check_policy(update: &QuantizedVector, policy: &VerificationPolicy) -> PolicyCheck {
    let sq: f64 = update.values.iter().map(|&v| (v as f64).powi(2)).sum();
    let norm = sq.sqrt() / SCALE;
    PolicyCheck {
        pass: norm <= policy.norm_bound,
        norm,
    }
}

/// `factor` times the median of `norms`; `None` when empty.
pub fn calibrate_norm_bound(norms: &[f64], factor: f64) -> Option<f64> {
    if norms.is_empty() {
        return None;
    }
    let mut v = norms.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    let median = if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    };
    Some(factor * median)
}
