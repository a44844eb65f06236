//! Feedback bit accounting.

use serde::{Deserialize, Serialize};

use crate::codec::payload::PayloadLayout;
use crate::config::SystemConfig;

/// Raw bits of each protocol step and the per-user cost per channel
/// coherence interval.
///
/// Steps 1 and 2 are sent once per angle coherence interval, so they are
/// divided by `coherence_ratio`; step 1 is additionally carried by only a
/// fraction of the users.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub step1_bits: usize,
    pub step2_bits: usize,
    pub step3_bits: usize,
    pub gain_bits: usize,
    pub step1_amortized: f64,
    pub step2_amortized: f64,
    pub per_user_amortized_bits: f64,
}

impl OverheadReport {
    pub fn raw_total(&self) -> usize {
        self.step1_bits + self.step2_bits + self.step3_bits + self.gain_bits
    }
}

pub fn overhead(config: &SystemConfig) -> OverheadReport {
    let layout = PayloadLayout::from_config(config);
    let ratio = config.coherence_ratio as f64;
    let step1_bits = layout.step1_bits();
    let step2_bits = layout.step2_bits();
    let step3_bits = layout.step3_bits();
    let gain_bits = layout.gain_field_bits();
    let step1_amortized = step1_bits as f64 * config.step1_user_fraction / ratio;
    let step2_amortized = step2_bits as f64 / ratio;
    OverheadReport {
        step1_bits,
        step2_bits,
        step3_bits,
        gain_bits,
        step1_amortized,
        step2_amortized,
        per_user_amortized_bits: step1_amortized + step2_amortized + (step3_bits + gain_bits) as f64,
    }
}

/// Accounting of the full-dimension RVQ baseline: shared support as in
/// step 1, no angle feedback, `B` bits per column.
pub fn conventional_overhead(config: &SystemConfig) -> OverheadReport {
    let mut report = overhead(config);
    report.per_user_amortized_bits -= report.step2_amortized;
    report.step2_bits = 0;
    report.step2_amortized = 0.0;
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step1_amortizes_to_about_one_bit() {
        let r = overhead(&SystemConfig::default());
        assert_eq!(r.step1_bits, 36);
        assert!((r.step1_amortized - 0.9).abs() < 1e-12);
    }

    #[test]
    fn step3_is_l1_times_b() {
        let r = overhead(&SystemConfig {
            b: 10,
            ..SystemConfig::default()
        });
        assert_eq!(r.step3_bits, 40);
        let r = overhead(&SystemConfig {
            b: 1,
            ..SystemConfig::default()
        });
        assert_eq!(r.step3_bits, 4);
    }

    #[test]
    fn no_amortization_gives_raw_total() {
        let cfg = SystemConfig {
            coherence_ratio: 1,
            step1_user_fraction: 1.0,
            ..SystemConfig::default()
        };
        let r = overhead(&cfg);
        assert!((r.per_user_amortized_bits - r.raw_total() as f64).abs() < 1e-12);
    }

    #[test]
    fn default_breakdown() {
        let r = overhead(&SystemConfig::default());
        assert_eq!(r.step2_bits, 4 * 2 * 2 * 7);
        assert!((r.per_user_amortized_bits - (0.9 + 11.2 + 40.0)).abs() < 1e-9);
        let c = conventional_overhead(&SystemConfig::default());
        assert!((c.per_user_amortized_bits - 40.9).abs() < 1e-9);
    }
}
