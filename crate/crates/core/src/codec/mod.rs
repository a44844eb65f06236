//! Three-step feedback: shared support (step 1), quantized cascaded AoAs
//! (step 2) and subspace codeword indexes (step 3).
//!
//! Column gains are not part of the protocol. The encoder reports for each
//! column the complex gain `|h| exp(j arg(c^H h))` relative to the chosen
//! unit codeword `c`; the decoder takes these as genie side information. If
//! `gain_bits > 0` the phase is quantized into the payload instead and only
//! the magnitude stays genie.

pub mod codebook;
pub mod overhead;
pub mod payload;
pub mod quantize;

use std::f64::consts::TAU;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::angular::{aod_to_grid_index, build_dictionary, extract_hybrid, reconstruct_with_atoms, AodDictionary, HybridChannel};
use crate::channel::{CascadedChannel, PathSet};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::unit;

pub use codebook::{
    build_subspace_codebook, chordal_distance_sq, select_codeword, Codebook, CodewordChoice, RvqCodebook,
    SubspaceCodebook,
};
pub use overhead::{conventional_overhead, overhead, OverheadReport};
pub use payload::{FeedbackPayload, PayloadLayout};
pub use quantize::{quantize_cascaded_angles, FreqIndex, QuantizedAngles};

/// Nearest-grid AoD indexes sorted ascending, plus the BS-RIS path index
/// behind each sorted entry. Two AoDs on one grid point are rejected.
pub fn support_from_paths(paths: &PathSet, g_t: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut indexed: Vec<(usize, usize)> = paths
        .bs_ris
        .iter()
        .enumerate()
        .map(|(i, p)| (aod_to_grid_index(p.aod, g_t), i))
        .collect();
    indexed.sort_unstable();
    if indexed.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::IllConditioned {
            cond: f64::INFINITY,
        });
    }
    Ok(indexed.into_iter().unzip())
}

pub fn quantize_phase(angle: f64, bits: u32) -> u32 {
    let levels = 1u64 << bits;
    let t = (angle.rem_euclid(TAU) / TAU * levels as f64).round() as u64;
    (t % levels) as u32
}

pub fn dequantize_phase(q: u32, bits: u32) -> f64 {
    TAU * q as f64 / (1u64 << bits) as f64
}

/// UE-side result of encoding one user.
#[derive(Debug, Clone)]
pub struct EncodedFeedback {
    pub payload: FeedbackPayload,
    /// Genie complex gain per column, in support order.
    pub gains: Vec<Complex64>,
    /// Chordal distance of each selected codeword.
    pub distances: Vec<f64>,
    /// Hybrid channel the UE quantized.
    pub hybrid: HybridChannel,
}

/// Decoded non-zero columns of every user on the shared support.
#[derive(Debug, Clone)]
pub struct DecodedFeedback {
    pub support: Vec<usize>,
    pub columns: Vec<Vec<DVector<Complex64>>>,
}

/// Encoder and decoder sharing one dictionary and one pre-agreed RVQ base
/// codebook.
#[derive(Debug, Clone)]
pub struct FeedbackCodec {
    config: SystemConfig,
    dict: Arc<AodDictionary>,
    base: Arc<RvqCodebook>,
}

impl FeedbackCodec {
    pub fn new(config: &SystemConfig, codebook_seed: u64) -> Result<Self> {
        config.validate()?;
        let dict = build_dictionary(config.m, config.g_t, config.l1, config.d_b_over_lambda)?;
        Ok(Self::with_dictionary(config, Arc::new(dict), codebook_seed))
    }

    pub fn with_dictionary(config: &SystemConfig, dict: Arc<AodDictionary>, codebook_seed: u64) -> Self {
        FeedbackCodec {
            config: config.clone(),
            dict,
            base: Arc::new(RvqCodebook::random(config.b, config.l2, codebook_seed)),
        }
    }

    /// Same codec with a different base codebook.
    pub fn with_base(mut self, base: Arc<RvqCodebook>) -> Self {
        self.base = base;
        self
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn dictionary(&self) -> &AodDictionary {
        &self.dict
    }

    pub fn base_codebook(&self) -> Arc<RvqCodebook> {
        Arc::clone(&self.base)
    }

    pub fn layout(&self) -> PayloadLayout {
        PayloadLayout::from_config(&self.config)
    }

    pub fn subspace_codebook(&self, pairs: &[FreqIndex]) -> Result<SubspaceCodebook> {
        build_subspace_codebook(pairs, &self.config, Arc::clone(&self.base))
    }

    /// Step 3 for a set of columns with their step-2 angles: codeword
    /// indexes, genie gains and chordal distances.
    pub fn encode_columns(
        &self,
        columns: &[DVector<Complex64>],
        angles: &QuantizedAngles,
    ) -> Result<(Vec<u32>, Vec<Complex64>, Vec<f64>)> {
        self.encode_columns_with(columns, angles, |_, cb| Ok(cb))
    }

    /// As [`encode_columns`](Self::encode_columns) with a hook that may
    /// alter each column's codebook before the search.
    pub fn encode_columns_with<F>(
        &self,
        columns: &[DVector<Complex64>],
        angles: &QuantizedAngles,
        mut adjust: F,
    ) -> Result<(Vec<u32>, Vec<Complex64>, Vec<f64>)>
    where
        F: FnMut(usize, SubspaceCodebook) -> Result<SubspaceCodebook>,
    {
        if columns.len() != angles.pairs.len() {
            return Err(Error::Dimension(format!(
                "{} columns for {} angle groups",
                columns.len(),
                angles.pairs.len()
            )));
        }
        let mut codewords = Vec::with_capacity(columns.len());
        let mut gains = Vec::with_capacity(columns.len());
        let mut distances = Vec::with_capacity(columns.len());
        for (i, (col, pairs)) in columns.iter().zip(&angles.pairs).enumerate() {
            let cb = adjust(i, self.subspace_codebook(pairs)?)?;
            let choice = cb.select(col)?;
            let c = unit(&cb.codeword(choice.index)).unwrap_or_else(|_| DVector::zeros(col.len()));
            codewords.push(choice.index as u32);
            gains.push(column_gain(col, &c));
            distances.push(choice.distance);
        }
        Ok((codewords, gains, distances))
    }

    /// Encodes one user. The support is the nearest-grid index of each
    /// true AoD; only appointed users put it into the payload.
    pub fn encode(&self, channel: &CascadedChannel, paths: &PathSet, appointed: bool) -> Result<EncodedFeedback> {
        let (support, order) = support_from_paths(paths, self.config.g_t)?;
        let hybrid = extract_hybrid(channel, &support, &self.dict)?;
        let angles = quantize_cascaded_angles(paths, channel.user, &self.config).permuted(&order);
        let (codewords, gains, distances) = self.encode_columns(&hybrid.columns, &angles)?;
        let gain_phases = (self.config.gain_bits > 0).then(|| {
            gains
                .iter()
                .map(|g| quantize_phase(g.arg(), self.config.gain_bits))
                .collect()
        });
        Ok(EncodedFeedback {
            payload: FeedbackPayload {
                support: appointed.then(|| support.clone()),
                angles,
                codewords,
                gain_phases,
            },
            gains,
            distances,
            hybrid,
        })
    }

    /// Rebuilds the non-zero columns of one user from steps 2-3.
    pub fn decode_columns(
        &self,
        angles: &QuantizedAngles,
        codewords: &[u32],
        gains: &[Complex64],
        gain_phases: Option<&[u32]>,
    ) -> Result<Vec<DVector<Complex64>>> {
        self.decode_columns_with(angles, codewords, gains, gain_phases, |_, cb| Ok(cb))
    }

    pub fn decode_columns_with<F>(
        &self,
        angles: &QuantizedAngles,
        codewords: &[u32],
        gains: &[Complex64],
        gain_phases: Option<&[u32]>,
        mut adjust: F,
    ) -> Result<Vec<DVector<Complex64>>>
    where
        F: FnMut(usize, SubspaceCodebook) -> Result<SubspaceCodebook>,
    {
        if codewords.len() != angles.pairs.len() || gains.len() != codewords.len() {
            return Err(Error::MalformedPayload(format!(
                "{} codewords, {} angle groups, {} gains",
                codewords.len(),
                angles.pairs.len(),
                gains.len()
            )));
        }
        let mut out = Vec::with_capacity(codewords.len());
        for (i, (&q, pairs)) in codewords.iter().zip(&angles.pairs).enumerate() {
            let cb = adjust(i, self.subspace_codebook(pairs)?)?;
            if q as usize >= cb.size() {
                return Err(Error::MalformedPayload(format!(
                    "codeword index {q} outside codebook of {}",
                    cb.size()
                )));
            }
            let c = unit(&cb.codeword(q as usize))?;
            let gain = match gain_phases {
                Some(p) => Complex64::from_polar(gains[i].norm(), dequantize_phase(p[i], self.config.gain_bits)),
                None => gains[i],
            };
            out.push(c * gain);
        }
        Ok(out)
    }

    /// BS side: takes the support from the first payload carrying it and
    /// rebuilds every user's columns. `gains[k]` holds user `k`'s genie
    /// column gains.
    pub fn decode(&self, payloads: &[FeedbackPayload], gains: &[Vec<Complex64>]) -> Result<DecodedFeedback> {
        let layout = self.layout();
        let support = payloads
            .iter()
            .find_map(|p| p.support.clone())
            .ok_or_else(|| Error::Protocol("no payload carries the support indexes".into()))?;
        if gains.len() != payloads.len() {
            return Err(Error::Protocol(format!(
                "{} gain lists for {} payloads",
                gains.len(),
                payloads.len()
            )));
        }
        let mut columns = Vec::with_capacity(payloads.len());
        for (p, g) in payloads.iter().zip(gains) {
            p.validate(&layout)?;
            columns.push(self.decode_columns(&p.angles, &p.codewords, g, p.gain_phases.as_deref())?);
        }
        Ok(DecodedFeedback { support, columns })
    }

    /// Decoded spatial-domain channels, one `N x M` matrix per user.
    pub fn decode_spatial(&self, payloads: &[FeedbackPayload], gains: &[Vec<Complex64>]) -> Result<Vec<DMatrix<Complex64>>> {
        let decoded = self.decode(payloads, gains)?;
        let atoms = self.dict.select(&decoded.support)?;
        Ok(decoded
            .columns
            .iter()
            .map(|cols| reconstruct_with_atoms(cols, &atoms, self.config.n()))
            .collect())
    }
}

/// `|h| exp(j arg(c^H h))`, the gain that best aligns unit codeword `c` with `h`.
pub fn column_gain(column: &DVector<Complex64>, codeword: &DVector<Complex64>) -> Complex64 {
    let inner = codeword.dotc(column);
    let phase = if inner.norm() > 0.0 { inner.arg() } else { 0.0 };
    Complex64::from_polar(column.norm(), phase)
}

/// Encodes one user with a fresh codec.
pub fn encode_feedback(
    channel: &CascadedChannel,
    paths: &PathSet,
    config: &SystemConfig,
    appointed: bool,
    codebook_seed: u64,
) -> Result<EncodedFeedback> {
    FeedbackCodec::new(config, codebook_seed)?.encode(channel, paths, appointed)
}

/// Decodes all users with a fresh codec.
pub fn decode_feedback(
    payloads: &[FeedbackPayload],
    config: &SystemConfig,
    codebook_seed: u64,
    gains: &[Vec<Complex64>],
) -> Result<Vec<DMatrix<Complex64>>> {
    FeedbackCodec::new(config, codebook_seed)?.decode_spatial(payloads, gains)
}

/// Full-dimension RVQ baseline: each non-zero column is quantized with an
/// isotropic `N`-dimensional codebook of `2^B` entries, without angle
/// feedback.
#[derive(Debug, Clone)]
pub struct ConventionalCodec {
    config: SystemConfig,
    base: Arc<RvqCodebook>,
}

impl ConventionalCodec {
    pub fn new(config: &SystemConfig, codebook_seed: u64) -> Self {
        ConventionalCodec {
            config: config.clone(),
            base: Arc::new(RvqCodebook::random(config.b, config.n(), codebook_seed)),
        }
    }

    pub fn codebook(&self) -> &RvqCodebook {
        &self.base
    }

    pub fn encode_columns(&self, columns: &[DVector<Complex64>]) -> Result<(Vec<u32>, Vec<Complex64>)> {
        let mut codewords = Vec::with_capacity(columns.len());
        let mut gains = Vec::with_capacity(columns.len());
        for col in columns {
            let choice = self.base.select(col)?;
            codewords.push(choice.index as u32);
            gains.push(column_gain(col, &self.base.codeword(choice.index)));
        }
        Ok((codewords, gains))
    }

    pub fn decode_columns(&self, codewords: &[u32], gains: &[Complex64]) -> Result<Vec<DVector<Complex64>>> {
        codewords
            .iter()
            .zip(gains)
            .map(|(&q, &g)| {
                if q as usize >= self.base.size() {
                    return Err(Error::MalformedPayload(format!("codeword index {q}")));
                }
                Ok(self.base.codeword(q as usize) * g)
            })
            .collect()
    }

    pub fn overhead(&self) -> OverheadReport {
        conventional_overhead(&self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angular::grid_point;
    use crate::channel::{build_cascaded_channel, sample_paths};
    use crate::linalg::relative_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn on_grid(config: &SystemConfig, seed: u64) -> (PathSet, Vec<CascadedChannel>) {
        let cfg = SystemConfig {
            on_grid: true,
            ..config.clone()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let paths = sample_paths(&cfg, &mut rng);
            if support_from_paths(&paths, cfg.g_t).is_err() {
                continue;
            }
            let chans = (0..cfg.k)
                .map(|k| build_cascaded_channel(&paths, k, &cfg).unwrap())
                .collect();
            return (paths, chans);
        }
    }

    #[test]
    fn only_appointed_user_carries_support() {
        let cfg = SystemConfig::default();
        let codec = FeedbackCodec::new(&cfg, 5).unwrap();
        let (paths, chans) = on_grid(&cfg, 1);
        let payloads: Vec<_> = chans
            .iter()
            .map(|c| codec.encode(c, &paths, c.user == 0).unwrap().payload)
            .collect();
        assert_eq!(payloads.iter().filter(|p| p.support.is_some()).count(), 1);
        assert!(payloads[1].support.is_none());
        for p in &payloads {
            assert_eq!(p.codewords.len(), cfg.l1);
            assert!(p.codewords.iter().all(|&q| q < 1 << cfg.b));
        }
    }

    #[test]
    fn missing_support_is_protocol_error() {
        let cfg = SystemConfig::default();
        let codec = FeedbackCodec::new(&cfg, 5).unwrap();
        let (paths, chans) = on_grid(&cfg, 2);
        let enc = codec.encode(&chans[0], &paths, false).unwrap();
        let err = codec.decode(&[enc.payload], &[enc.gains]).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }

    #[test]
    fn out_of_range_codeword_is_malformed() {
        let cfg = SystemConfig::default();
        let codec = FeedbackCodec::new(&cfg, 5).unwrap();
        let (paths, chans) = on_grid(&cfg, 2);
        let mut enc = codec.encode(&chans[0], &paths, true).unwrap();
        enc.payload.codewords[2] = 1 << cfg.b;
        let err = codec.decode(&[enc.payload], &[enc.gains]).unwrap_err();
        assert!(matches!(err, Error::MalformedPayload(_)));
    }

    #[test]
    fn high_resolution_directions_are_close() {
        let cfg = SystemConfig {
            b: 16,
            b0: 12,
            ..SystemConfig::default()
        };
        let codec = FeedbackCodec::new(&cfg, 11).unwrap();
        let (paths, chans) = on_grid(&cfg, 3);
        let encoded: Vec<_> = chans
            .iter()
            .map(|c| codec.encode(c, &paths, c.user == 0).unwrap())
            .collect();
        let payloads: Vec<_> = encoded.iter().map(|e| e.payload.clone()).collect();
        let gains: Vec<_> = encoded.iter().map(|e| e.gains.clone()).collect();
        let decoded = codec.decode(&payloads, &gains).unwrap();
        for (e, cols) in encoded.iter().zip(&decoded.columns) {
            for (truth, rec) in e.hybrid.columns.iter().zip(cols) {
                assert!(chordal_distance_sq(truth, rec).unwrap() < 0.05);
            }
        }
    }

    #[test]
    fn planted_direction_reconstructs_exactly() {
        let cfg = SystemConfig::default();
        let codec = FeedbackCodec::new(&cfg, 13).unwrap();
        let (paths, chans) = on_grid(&cfg, 4);
        let (support, order) = support_from_paths(&paths, cfg.g_t).unwrap();
        // exact angles: plant each true column's coordinates in its own codebook
        let ch = &chans[1];
        let hybrid = extract_hybrid(ch, &support, codec.dictionary()).unwrap();
        let angles = quantize_cascaded_angles(&paths, 1, &cfg).permuted(&order);
        let exact: Vec<DMatrix<Complex64>> = order
            .iter()
            .map(|&i| {
                let bs = &paths.bs_ris[i];
                let mut b = DMatrix::zeros(cfg.n(), cfg.l2);
                for (j, ue) in paths.ris_ue[1].iter().enumerate() {
                    b.set_column(j, &crate::channel::cascaded_steering(ue, bs, &cfg));
                }
                b
            })
            .collect();
        let plant = |i: usize, mut cb: SubspaceCodebook| {
            cb.steering = exact[i].clone();
            let col = &hybrid.columns[i];
            let b = &cb.steering;
            let r = (b.adjoint() * b).try_inverse().unwrap() * b.adjoint() * col;
            cb.plant(7, r)?;
            Ok(cb)
        };
        let (codewords, gains, dist) = codec.encode_columns_with(&hybrid.columns, &angles, plant).unwrap();
        assert!(codewords.iter().all(|&q| q == 7));
        assert!(dist.iter().all(|&d| d < 1e-12));
        let cols = codec
            .decode_columns_with(&angles, &codewords, &gains, None, plant)
            .unwrap();
        let atoms = codec.dictionary().select(&support).unwrap();
        let rec = reconstruct_with_atoms(&cols, &atoms, cfg.n());
        assert!(relative_error(&rec, &ch.h) < 1e-6);
    }

    #[test]
    fn single_codeword_codebook() {
        let cfg = SystemConfig {
            b: 0,
            ..SystemConfig::default()
        };
        let codec = FeedbackCodec::new(&cfg, 1).unwrap();
        let (paths, chans) = on_grid(&cfg, 6);
        let enc = codec.encode(&chans[0], &paths, true).unwrap();
        assert!(enc.payload.codewords.iter().all(|&q| q == 0));
        let dec = codec.decode(&[enc.payload.clone()], &[enc.gains.clone()]).unwrap();
        for (i, col) in dec.columns[0].iter().enumerate() {
            let cb = codec.subspace_codebook(&enc.payload.angles.pairs[i]).unwrap();
            assert!(chordal_distance_sq(col, &cb.codeword(0)).unwrap() < 1e-12);
        }
    }

    #[test]
    fn serialized_payloads_decode_identically() {
        let cfg = SystemConfig::default();
        let codec = FeedbackCodec::new(&cfg, 21).unwrap();
        let (paths, chans) = on_grid(&cfg, 7);
        let encoded: Vec<_> = chans
            .iter()
            .map(|c| codec.encode(c, &paths, c.user == 0).unwrap())
            .collect();
        let payloads: Vec<_> = encoded.iter().map(|e| e.payload.clone()).collect();
        let gains: Vec<_> = encoded.iter().map(|e| e.gains.clone()).collect();
        let layout = codec.layout();
        let parsed: Vec<_> = payloads
            .iter()
            .map(|p| FeedbackPayload::from_bytes(&p.to_bytes(&layout).unwrap(), &layout).unwrap())
            .collect();
        assert_eq!(
            codec.decode_spatial(&payloads, &gains).unwrap(),
            codec.decode_spatial(&parsed, &gains).unwrap()
        );
    }

    #[test]
    fn gain_phase_bits_round_trip() {
        let cfg = SystemConfig {
            gain_bits: 6,
            ..SystemConfig::default()
        };
        let codec = FeedbackCodec::new(&cfg, 21).unwrap();
        let (paths, chans) = on_grid(&cfg, 8);
        let enc = codec.encode(&chans[0], &paths, true).unwrap();
        let phases = enc.payload.gain_phases.clone().unwrap();
        assert_eq!(phases.len(), cfg.l1);
        let layout = codec.layout();
        let bytes = enc.payload.to_bytes(&layout).unwrap();
        assert_eq!(bytes[0], 0b11);
        assert_eq!(enc.payload.bit_len(&layout), 36 + 112 + 40 + 24);
        let dec = codec.decode(&[enc.payload.clone()], &[enc.gains.clone()]).unwrap();
        for (col, g) in dec.columns[0].iter().zip(&enc.gains) {
            assert!((col.norm() - g.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn phase_quantizer() {
        assert_eq!(quantize_phase(0.0, 3), 0);
        assert_eq!(quantize_phase(TAU - 1e-9, 3), 0);
        assert_eq!(quantize_phase(-TAU / 8.0, 3), 7);
        assert!((dequantize_phase(2, 2) - std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn support_rejects_collisions() {
        let cfg = SystemConfig::default();
        let mut paths = sample_paths(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        paths.bs_ris[1].aod = grid_point(40, cfg.g_t).asin();
        paths.bs_ris[2].aod = grid_point(40, cfg.g_t).asin();
        assert!(support_from_paths(&paths, cfg.g_t).is_err());
    }

    #[test]
    fn conventional_round_trip_dimensions() {
        let cfg = SystemConfig {
            b: 6,
            ..SystemConfig::default()
        };
        let conv = ConventionalCodec::new(&cfg, 3);
        assert_eq!(conv.codebook().dim(), cfg.n());
        let (paths, chans) = on_grid(&cfg, 9);
        let (support, _) = support_from_paths(&paths, cfg.g_t).unwrap();
        let dict = build_dictionary(cfg.m, cfg.g_t, cfg.l1, 0.5).unwrap();
        let hy = extract_hybrid(&chans[0], &support, &dict).unwrap();
        let (q, g) = conv.encode_columns(&hy.columns).unwrap();
        let cols = conv.decode_columns(&q, &g).unwrap();
        for (c, h) in cols.iter().zip(&hy.columns) {
            assert!((c.norm() - h.norm()).abs() < 1e-12);
        }
    }
}
