//! Monte-Carlo experiment driver.
//!
//! Every trial draws one channel realisation from a seed derived from the
//! run seed and the trial index, so results do not depend on how trials are
//! scheduled across threads. All schemes see the same realisations and the
//! same CEO seed for a given trial.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::angular::{build_dictionary, extract_with_atoms, AodDictionary};
use crate::beamforming::{design_and_evaluate, BsCsi, CeoParams};
use crate::channel::{build_cascaded_channel, cascaded_steering, sample_paths, ula_steering, CascadedChannel, PathSet};
use crate::codec::{
    conventional_overhead, overhead, quantize_cascaded_angles, support_from_paths, ConventionalCodec, FeedbackCodec,
    FeedbackPayload,
};
use crate::config::SystemConfig;
use crate::error::{Error, Result};

/// Resamples allowed per trial after degenerate realisations.
pub const MAX_RESAMPLES: usize = 10;

const CODEBOOK_SALT: u64 = 0x636f_6465_626f_6f6b;
const CEO_SALT: u64 = 0x6365_6f5f_7365_6564;

/// CSI acquisition scheme at the BS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Three-step feedback with angle-adaptive subspace codebooks.
    Proposed,
    /// Isotropic `N`-dimensional RVQ per column on the same support.
    Conventional,
    /// BS beamforms on the true channels.
    PerfectCsit,
    /// Proposed scheme with exact AoDs instead of grid indexes.
    ProposedPerfectAod,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::Proposed,
        Scheme::Conventional,
        Scheme::PerfectCsit,
        Scheme::ProposedPerfectAod,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Conventional => "conventional",
            Scheme::PerfectCsit => "perfect_csit",
            Scheme::ProposedPerfectAod => "proposed_perfect_aod",
        }
    }

    /// Whether the scheme's rate changes along `axis`.
    pub fn varies_along(&self, axis: &Axis) -> bool {
        match (self, axis) {
            (Scheme::PerfectCsit, _) => false,
            (Scheme::ProposedPerfectAod, Axis::GridResolution(_)) => false,
            _ => true,
        }
    }

    pub fn per_user_bits(&self, config: &SystemConfig) -> Option<f64> {
        match self {
            Scheme::Proposed | Scheme::ProposedPerfectAod => Some(overhead(config).per_user_amortized_bits),
            Scheme::Conventional => Some(conventional_overhead(config).per_user_amortized_bits),
            Scheme::PerfectCsit => None,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s.trim())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scheme '{s}'")))
    }
}

/// Swept parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    CodewordBits(Vec<u32>),
    GridResolution(Vec<usize>),
}

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::CodewordBits(_) => "codeword_bits",
            Axis::GridResolution(_) => "grid_resolution",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Axis::CodewordBits(v) => v.len(),
            Axis::GridResolution(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn value(&self, i: usize) -> f64 {
        match self {
            Axis::CodewordBits(v) => v[i] as f64,
            Axis::GridResolution(v) => v[i] as f64,
        }
    }

    fn apply(&self, i: usize, config: &SystemConfig) -> SystemConfig {
        let mut c = config.clone();
        match self {
            Axis::CodewordBits(v) => c.b = v[i],
            Axis::GridResolution(v) => c.g_t = v[i],
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: Axis,
    pub trials: usize,
    pub base: SystemConfig,
    pub ceo: CeoParams,
    pub schemes: Vec<Scheme>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        let positive = match &self.axis {
            Axis::CodewordBits(_) => true,
            Axis::GridResolution(v) => v.iter().all(|&g| g > 0),
        };
        if !positive {
            return Err(Error::InvalidConfig("axis values must be positive".into()));
        }
        self.base.validate()?;
        self.ceo.validate()
    }
}

/// Aggregate of one (scheme, configuration) point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointStats {
    pub mean: f64,
    pub stderr: f64,
    pub rates: Vec<f64>,
}

impl PointStats {
    pub fn from_rates(rates: Vec<f64>) -> Self {
        let n = rates.len();
        let mean = if n == 0 { 0.0 } else { pairwise_sum(&rates) / n as f64 };
        let stderr = if n < 2 {
            0.0
        } else {
            let dev: Vec<f64> = rates.iter().map(|r| (r - mean) * (r - mean)).collect();
            (pairwise_sum(&dev) / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        };
        PointStats { mean, stderr, rates }
    }
}

fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        xs.iter().sum()
    } else {
        let (a, b) = xs.split_at(xs.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scheme: Scheme,
    pub axis: String,
    /// `None` for schemes that do not vary along the axis.
    pub axis_value: Option<f64>,
    pub per_user_bits: Option<f64>,
    pub mean_rate: f64,
    pub stderr: f64,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

pub const CSV_HEADER: &str = "scheme,axis,axis_value,per_user_bits,mean_rate,stderr,trials,seed";

impl ResultTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        let opt = |x: Option<f64>| x.map(format_sig6).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.scheme,
                r.axis,
                opt(r.axis_value),
                opt(r.per_user_bits),
                format_sig6(r.mean_rate),
                format_sig6(r.stderr),
                r.trials,
                r.seed
            ));
        }
        out
    }

    pub fn find(&self, scheme: Scheme, axis_value: Option<f64>) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.scheme == scheme && r.axis_value == axis_value)
    }
}

/// Six significant digits, `%g` style.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{x:.5e}");
        let (mantissa, e) = s.split_once('e').unwrap_or((&s, "0"));
        let mantissa = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{mantissa}e{e}")
    }
}

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of attempt `attempt` of trial `trial`.
pub fn trial_seed(seed: u64, trial: usize, attempt: usize) -> u64 {
    mix64(mix64(seed ^ trial as u64) ^ (attempt as u64).rotate_left(32))
}

pub fn codebook_seed(seed: u64) -> u64 {
    mix64(seed ^ CODEBOOK_SALT)
}

/// CEO seed of a realisation; every scheme uses the same one.
pub fn ceo_seed(realization_seed: u64) -> u64 {
    mix64(realization_seed ^ CEO_SALT)
}

/// One channel realisation: paths and every user's true channel.
#[derive(Debug, Clone)]
pub struct Realization {
    pub paths: PathSet,
    pub channels: Vec<CascadedChannel>,
    pub seed: u64,
}

pub fn realize(config: &SystemConfig, seed: u64) -> Result<Realization> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let paths = sample_paths(config, &mut rng);
    let channels = (0..config.k)
        .map(|k| build_cascaded_channel(&paths, k, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(Realization { paths, channels, seed })
}

/// Exact ULA responses of the true AoDs, `M x L1`, in path order.
pub fn exact_aod_atoms(paths: &PathSet, config: &SystemConfig) -> DMatrix<Complex64> {
    let mut a = DMatrix::zeros(config.m, paths.bs_ris.len());
    for (i, p) in paths.bs_ris.iter().enumerate() {
        a.set_column(i, &ula_steering(p.aod, config.m, config.d_b_over_lambda));
    }
    a
}

/// True non-zero columns `sum_j g_{i,k,j} b(cascaded AoA)` of `user`, in path order.
pub fn exact_columns(paths: &PathSet, user: usize, config: &SystemConfig) -> Vec<DVector<Complex64>> {
    paths
        .bs_ris
        .iter()
        .enumerate()
        .map(|(i, bs)| {
            let mut col = DVector::zeros(config.n());
            for (j, ue) in paths.ris_ue[user].iter().enumerate() {
                col += cascaded_steering(ue, bs, config) * paths.cascaded_gain(i, user, j);
            }
            col
        })
        .collect()
}

fn directs(real: &Realization) -> Vec<DVector<Complex64>> {
    real.channels.iter().map(|c| c.direct.clone()).collect()
}

/// Codebooks and dictionary shared by all trials of one point.
#[derive(Debug, Clone)]
pub struct SchemeContext {
    pub config: SystemConfig,
    pub dict: Arc<AodDictionary>,
    pub codec: FeedbackCodec,
    pub conventional: Option<ConventionalCodec>,
}

impl SchemeContext {
    pub fn new(config: &SystemConfig, scheme: Scheme, seed: u64) -> Result<Self> {
        config.validate()?;
        let dict = Arc::new(build_dictionary(config.m, config.g_t, config.l1, config.d_b_over_lambda)?);
        let cb_seed = codebook_seed(seed);
        let codec = FeedbackCodec::with_dictionary(config, Arc::clone(&dict), cb_seed);
        let conventional = (scheme == Scheme::Conventional).then(|| ConventionalCodec::new(config, cb_seed));
        Ok(SchemeContext {
            config: config.clone(),
            dict,
            codec,
            conventional,
        })
    }

    /// Runs the scheme's feedback chain and returns the CSI the BS ends up with.
    pub fn bs_csi(&self, scheme: Scheme, real: &Realization) -> Result<BsCsi> {
        let cfg = &self.config;
        match scheme {
            Scheme::PerfectCsit => {
                let atoms = exact_aod_atoms(&real.paths, cfg);
                let cols: Vec<_> = (0..cfg.k).map(|k| exact_columns(&real.paths, k, cfg)).collect();
                BsCsi::from_factors(&atoms, &cols, &directs(real))
            }
            Scheme::Proposed => {
                let appointed = cfg.appointed_users();
                let encoded = real
                    .channels
                    .iter()
                    .map(|ch| self.codec.encode(ch, &real.paths, ch.user < appointed))
                    .collect::<Result<Vec<_>>>()?;
                let payloads: Vec<FeedbackPayload> = encoded.iter().map(|e| e.payload.clone()).collect();
                let gains: Vec<_> = encoded.iter().map(|e| e.gains.clone()).collect();
                let decoded = self.codec.decode(&payloads, &gains)?;
                let atoms = self.dict.select(&decoded.support)?;
                BsCsi::from_factors(&atoms, &decoded.columns, &directs(real))
            }
            Scheme::ProposedPerfectAod => {
                let atoms = exact_aod_atoms(&real.paths, cfg);
                let mut cols = Vec::with_capacity(cfg.k);
                for ch in &real.channels {
                    let columns = extract_with_atoms(&ch.h, &atoms)?;
                    let angles = quantize_cascaded_angles(&real.paths, ch.user, cfg);
                    let (q, g, _) = self.codec.encode_columns(&columns, &angles)?;
                    cols.push(self.codec.decode_columns(&angles, &q, &g, None)?);
                }
                BsCsi::from_factors(&atoms, &cols, &directs(real))
            }
            Scheme::Conventional => {
                let conv = self
                    .conventional
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("context built without conventional codebook".into()))?;
                let (support, _) = support_from_paths(&real.paths, cfg.g_t)?;
                let atoms = self.dict.select(&support)?;
                let mut cols = Vec::with_capacity(cfg.k);
                for ch in &real.channels {
                    let columns = extract_with_atoms(&ch.h, &atoms)?;
                    let (q, g) = conv.encode_columns(&columns)?;
                    cols.push(conv.decode_columns(&q, &g)?);
                }
                BsCsi::from_factors(&atoms, &cols, &directs(real))
            }
        }
    }
}

/// Errors that mean "unlucky realisation" rather than a bug.
pub fn is_degenerate(e: &Error) -> bool {
    matches!(
        e,
        Error::IllConditioned { .. } | Error::DegenerateChannel { .. } | Error::ZeroNorm
    )
}

/// Per-user rate of one trial, resampling degenerate realisations.
pub fn run_trial(
    ctx: &SchemeContext,
    scheme: Scheme,
    ceo: &CeoParams,
    seed: u64,
    trial: usize,
) -> Result<f64> {
    let gamma = ctx.config.gamma();
    let mut last = None;
    for attempt in 0..=MAX_RESAMPLES {
        let s = trial_seed(seed, trial, attempt);
        let result = realize(&ctx.config, s).and_then(|real| {
            let csi = ctx.bs_csi(scheme, &real)?;
            let params = CeoParams {
                seed: ceo_seed(s),
                ..ceo.clone()
            };
            design_and_evaluate(&csi, &real.channels, gamma, &params)
        });
        match result {
            Ok((report, _)) => return Ok(report.per_user_rate),
            Err(e) if is_degenerate(&e) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(Error::TrialExhausted {
        attempts: MAX_RESAMPLES + 1,
        source: Box::new(last.expect("at least one attempt")),
    })
}

/// Mean and standard error of the per-user rate over `trials` realisations.
pub fn run_point(
    config: &SystemConfig,
    ceo: &CeoParams,
    scheme: Scheme,
    trials: usize,
    seed: u64,
) -> Result<PointStats> {
    let ctx = SchemeContext::new(config, scheme, seed)?;
    run_point_with(&ctx, ceo, scheme, trials, seed)
}

pub fn run_point_with(
    ctx: &SchemeContext,
    ceo: &CeoParams,
    scheme: Scheme,
    trials: usize,
    seed: u64,
) -> Result<PointStats> {
    ceo.validate()?;
    let rates = (0..trials)
        .into_par_iter()
        .map(|t| run_trial(ctx, scheme, ceo, seed, t))
        .collect::<Result<Vec<f64>>>()?;
    Ok(PointStats::from_rates(rates))
}

pub const FIG4_BITS: [u32; 5] = [1, 4, 7, 10, 13];
pub const FIG5_GRID: [usize; 3] = [32, 128, 512];

/// Rate against overhead: `B` swept at `G_t = 512`, `B0 = 7`.
pub fn fig4_spec(base: &SystemConfig, trials: usize) -> SweepSpec {
    SweepSpec {
        axis: Axis::CodewordBits(FIG4_BITS.to_vec()),
        trials,
        base: SystemConfig {
            g_t: 512,
            b0: 7,
            ..base.clone()
        },
        ceo: CeoParams::default(),
        schemes: vec![Scheme::Proposed, Scheme::Conventional, Scheme::PerfectCsit],
    }
}

/// Rate against AoD resolution at `B = 10`, `B0 = 6`, with the exact-AoD
/// reference.
pub fn fig5_spec(base: &SystemConfig, trials: usize) -> SweepSpec {
    SweepSpec {
        axis: Axis::GridResolution(FIG5_GRID.to_vec()),
        trials,
        base: SystemConfig {
            b: 10,
            b0: 6,
            ..base.clone()
        },
        ceo: CeoParams::default(),
        schemes: vec![Scheme::Proposed, Scheme::ProposedPerfectAod, Scheme::PerfectCsit],
    }
}

/// Runs every scheme at every axis value; schemes that do not vary along
/// the axis run once with an empty axis value. Rows are sorted by scheme
/// name, then axis value.
pub fn sweep(spec: &SweepSpec) -> Result<ResultTable> {
    spec.validate()?;
    let seed = spec.base.rng_seed;
    let mut schemes = spec.schemes.clone();
    schemes.sort_by_key(|s| s.name());
    schemes.dedup();
    let mut rows = Vec::new();
    for scheme in schemes {
        let points: Vec<(Option<f64>, SystemConfig)> = if scheme.varies_along(&spec.axis) {
            (0..spec.axis.len())
                .map(|i| (Some(spec.axis.value(i)), spec.axis.apply(i, &spec.base)))
                .collect()
        } else if spec.axis.is_empty() {
            Vec::new()
        } else {
            vec![(None, spec.base.clone())]
        };
        let mut scheme_rows = Vec::with_capacity(points.len());
        for (value, config) in points {
            let stats = run_point(&config, &spec.ceo, scheme, spec.trials, seed)?;
            scheme_rows.push(ResultRow {
                scheme,
                axis: spec.axis.name().to_string(),
                axis_value: value,
                per_user_bits: scheme.per_user_bits(&config),
                mean_rate: stats.mean,
                stderr: stats.stderr,
                trials: spec.trials,
                seed,
            });
        }
        scheme_rows.sort_by(|a, b| {
            a.axis_value
                .unwrap_or(f64::NEG_INFINITY)
                .total_cmp(&b.axis_value.unwrap_or(f64::NEG_INFINITY))
        });
        rows.extend(scheme_rows);
    }
    Ok(ResultTable { rows })
}
