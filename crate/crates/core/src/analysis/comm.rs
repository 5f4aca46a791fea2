//! Bytes sent per segment: raw window versus extracted features.

use crate::model::{ModelConfig, FEATURE_CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommCost {
    /// `t_w * s' * 4 + t_w * 4`.
    pub raw_bytes: u64,
    /// CSI plus RSSI feature values, 4 bytes each.
    pub feature_bytes: u64,
    /// Features averaged over channels before sending.
    pub pooled_bytes: u64,
    /// `feature_bytes / raw_bytes`.
    pub ratio: f64,
}

pub fn comm_cost_report(config: &ModelConfig) -> CommCost {
    let (t, s) = (config.t_w as u64, config.subcarriers as u64);
    let (tp, sp) = (config.t_prime() as u64, config.s_prime() as u64);
    let c = FEATURE_CHANNELS as u64;
    let raw_bytes = 4 * (t * s + t);
    let feature_bytes = 4 * (c * tp * sp + c * tp);
    CommCost {
        raw_bytes,
        feature_bytes,
        pooled_bytes: 4 * (tp * sp + tp),
        ratio: feature_bytes as f64 / raw_bytes as f64,
    }
}
