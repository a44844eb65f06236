//! Simulation parameters shared by every module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions, bit budgets and path counts of one simulated system.
///
/// Field names follow the usual notation of the system model: `m` BS
/// antennas, an `n1 x n2` RIS, `k` users, `l1` BS-RIS paths and `l2`
/// RIS-UE paths per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub m: usize,
    pub n1: usize,
    pub n2: usize,
    pub k: usize,
    pub l1: usize,
    pub l2: usize,
    /// BS antenna spacing in wavelengths.
    pub d_b_over_lambda: f64,
    /// RIS element spacing in wavelengths.
    pub d_r_over_lambda: f64,
    pub snr_db: f64,
    /// AoD grid resolution of the BS dictionary.
    pub g_t: usize,
    /// Bits per quantized cascaded spatial-frequency component.
    pub b0: u32,
    /// Codeword index bits per non-zero column.
    pub b: u32,
    /// Angle coherence time over channel coherence time.
    pub coherence_ratio: u32,
    /// Fraction of users repeating the support feedback.
    pub step1_user_fraction: f64,
    /// Extra bits per column for a quantized gain phase; 0 means genie gains.
    pub gain_bits: u32,
    /// Include the direct BS-UE channel (genie-known at the BS).
    pub include_direct: bool,
    /// Snap sampled AoDs onto the dictionary grid.
    pub on_grid: bool,
    pub rng_seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            m: 32,
            n1: 8,
            n2: 8,
            k: 4,
            l1: 4,
            l2: 2,
            d_b_over_lambda: 0.5,
            d_r_over_lambda: 0.5,
            snr_db: 5.0,
            g_t: 512,
            b0: 7,
            b: 10,
            coherence_ratio: 10,
            step1_user_fraction: 0.25,
            gain_bits: 0,
            include_direct: false,
            on_grid: false,
            rng_seed: 1,
        }
    }
}

impl SystemConfig {
    /// Number of RIS elements.
    pub fn n(&self) -> usize {
        self.n1 * self.n2
    }

    /// Linear receive SNR (transmit power over unit noise variance).
    pub fn gamma(&self) -> f64 {
        10f64.powf(self.snr_db / 10.0)
    }

    /// Bits needed for one AoD grid index.
    pub fn grid_index_bits(&self) -> u32 {
        ceil_log2(self.g_t)
    }

    /// Number of users that carry the support indexes.
    pub fn appointed_users(&self) -> usize {
        ((self.step1_user_fraction * self.k as f64).ceil() as usize).clamp(1, self.k.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        for (name, v) in [
            ("m", self.m),
            ("n1", self.n1),
            ("n2", self.n2),
            ("k", self.k),
            ("l1", self.l1),
            ("l2", self.l2),
            ("g_t", self.g_t),
        ] {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if self.l1 > self.g_t {
            return fail(format!("l1 = {} exceeds g_t = {}", self.l1, self.g_t));
        }
        if self.l2 > self.n() {
            return fail(format!("l2 = {} exceeds n = {}", self.l2, self.n()));
        }
        if self.coherence_ratio == 0 {
            return fail("coherence_ratio must be at least 1".into());
        }
        if !(self.step1_user_fraction > 0.0 && self.step1_user_fraction <= 1.0) {
            return fail(format!(
                "step1_user_fraction = {} outside (0, 1]",
                self.step1_user_fraction
            ));
        }
        if !(self.d_b_over_lambda > 0.0 && self.d_r_over_lambda > 0.0) {
            return fail("antenna spacings must be positive".into());
        }
        if !self.snr_db.is_finite() {
            return fail("snr_db must be finite".into());
        }
        if self.b0 == 0 || self.b0 > 24 {
            return fail(format!("b0 = {} outside [1, 24]", self.b0));
        }
        if self.b > 24 {
            return fail(format!("b = {} exceeds 24", self.b));
        }
        if self.gain_bits > 16 {
            return fail(format!("gain_bits = {} exceeds 16", self.gain_bits));
        }
        Ok(())
    }
}

/// `ceil(log2(x))` for `x >= 1`.
pub fn ceil_log2(x: usize) -> u32 {
    if x <= 1 {
        0
    } else {
        usize::BITS - (x - 1).leading_zeros()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = SystemConfig::default();
        c.validate().unwrap();
        assert_eq!(c.n(), 64);
        assert_eq!(c.grid_index_bits(), 9);
        assert_eq!(c.appointed_users(), 1);
    }

    #[test]
    fn ceil_log2_values() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(3), 2);
        assert_eq!(ceil_log2(512), 9);
        assert_eq!(ceil_log2(513), 10);
    }

    #[test]
    fn rejects_bad_counts() {
        let mut c = SystemConfig::default();
        c.l1 = 0;
        assert!(c.validate().is_err());
        let mut c = SystemConfig::default();
        c.g_t = 2;
        assert!(c.validate().is_err());
        let mut c = SystemConfig::default();
        c.step1_user_fraction = 0.0;
        assert!(c.validate().is_err());
        let mut c = SystemConfig::default();
        c.l2 = 65;
        assert!(c.validate().is_err());
    }
}
