//! Uniform quantization of cascaded spatial frequencies.

use serde::{Deserialize, Serialize};

use crate::channel::{cascaded_frequencies, PathSet};
use crate::config::SystemConfig;

/// Half-width of the cascaded frequency range `[-2, 2]`.
pub const FREQ_LIMIT: f64 = 2.0;

/// Index of the nearest of `2^bits` level centres over `[-2, 2]`; a value
/// on the boundary between two centres maps to the lower one.
pub fn quantize_frequency(x: f64, bits: u32) -> u32 {
    let levels = 1u64 << bits;
    let step = 2.0 * FREQ_LIMIT / levels as f64;
    let x = x.clamp(-FREQ_LIMIT, FREQ_LIMIT);
    let t = (x + FREQ_LIMIT) / step;
    let q = t.ceil() - 1.0;
    q.clamp(0.0, (levels - 1) as f64) as u32
}

/// Centre of level `q`: `-2 + 4 (q + 0.5) / 2^bits`.
pub fn dequantize_frequency(q: u32, bits: u32) -> f64 {
    let levels = (1u64 << bits) as f64;
    -FREQ_LIMIT + 2.0 * FREQ_LIMIT * (q as f64 + 0.5) / levels
}

/// Quantized `(horizontal, vertical)` frequency index pair of one cascaded
/// AoA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreqIndex {
    pub az: u32,
    pub el: u32,
}

impl FreqIndex {
    pub fn dequantize(&self, bits: u32) -> (f64, f64) {
        (dequantize_frequency(self.az, bits), dequantize_frequency(self.el, bits))
    }
}

/// Step-2 content of one user: `pairs[i][j]` quantizes the cascaded AoA of
/// BS-RIS path `i` and RIS-UE path `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedAngles {
    pub bits: u32,
    pub pairs: Vec<Vec<FreqIndex>>,
}

impl QuantizedAngles {
    /// Reorders the per-column lists, e.g. into support order.
    pub fn permuted(&self, order: &[usize]) -> QuantizedAngles {
        QuantizedAngles {
            bits: self.bits,
            pairs: order.iter().map(|&i| self.pairs[i].clone()).collect(),
        }
    }
}

/// Quantizes every cascaded AoA pair of `user`, in BS-RIS path order.
pub fn quantize_cascaded_angles(paths: &PathSet, user: usize, config: &SystemConfig) -> QuantizedAngles {
    let pairs = paths
        .bs_ris
        .iter()
        .map(|bs| {
            paths.ris_ue[user]
                .iter()
                .map(|ue| {
                    let (u, v) = cascaded_frequencies(ue, bs);
                    FreqIndex {
                        az: quantize_frequency(u, config.b0),
                        el: quantize_frequency(v, config.b0),
                    }
                })
                .collect()
        })
        .collect();
    QuantizedAngles {
        bits: config.b0,
        pairs,
    }
}
