//! Geometric BS-RIS, RIS-UE, direct and cascaded channels.
//!
//! The BS carries a ULA, the RIS an `n1 x n2` UPA. A cascaded channel of
//! user `k` is the `N x M` matrix `H_k = diag(h_r,k^H) G`, so the RIS phase
//! vector enters the downlink linearly as `phi^T H_k`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};

/// Tolerance on `|phi_n| = 1` for RIS phase vectors.
pub const UNIT_MODULUS_TOL: f64 = 1e-9;

/// ULA response `(1/sqrt(M)) exp(j 2 pi d m sin(phi))`, `m = 0..M-1`.
pub fn ula_steering(phi: f64, m: usize, spacing: f64) -> DVector<Complex64> {
    let scale = 1.0 / (m as f64).sqrt();
    let step = 2.0 * PI * spacing * phi.sin();
    DVector::from_fn(m, |i, _| Complex64::from_polar(scale, step * i as f64))
}

/// UPA response, vertical factor (Kronecker) horizontal factor.
///
/// Entry `n2 * N1 + n1` equals
/// `(1/sqrt(N)) exp(j 2 pi d (n2 sin(theta) + n1 cos(theta) sin(phi)))`.
pub fn upa_steering(phi: f64, theta: f64, n1: usize, n2: usize, spacing: f64) -> DVector<Complex64> {
    let horizontal = theta.cos() * phi.sin();
    let vertical = theta.sin();
    planar_phase_vector(horizontal, vertical, n1, n2, spacing, 1.0 / ((n1 * n2) as f64).sqrt())
}

/// Cascaded steering vector parameterised directly by its two spatial
/// frequencies: entries `(1/N) exp(j 2 pi d (n1 u + n2 v))`.
pub fn cascaded_steering_from_freq(
    u: f64,
    v: f64,
    n1: usize,
    n2: usize,
    spacing: f64,
) -> DVector<Complex64> {
    planar_phase_vector(u, v, n1, n2, spacing, 1.0 / (n1 * n2) as f64)
}

fn planar_phase_vector(
    horizontal: f64,
    vertical: f64,
    n1: usize,
    n2: usize,
    spacing: f64,
    scale: f64,
) -> DVector<Complex64> {
    let kh = 2.0 * PI * spacing * horizontal;
    let kv = 2.0 * PI * spacing * vertical;
    DVector::from_fn(n1 * n2, |idx, _| {
        let (row, col) = (idx / n1, idx % n1);
        Complex64::from_polar(scale, kv * row as f64 + kh * col as f64)
    })
}

/// One BS-RIS path: complex gain, BS AoD and RIS azimuth/elevation AoA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsRisPath {
    pub gain: Complex64,
    pub aod: f64,
    pub aoa_azimuth: f64,
    pub aoa_elevation: f64,
}

/// One RIS-UE path: complex gain and RIS azimuth/elevation AoD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RisUePath {
    pub gain: Complex64,
    pub aod_azimuth: f64,
    pub aod_elevation: f64,
}

/// Horizontal and vertical spatial frequencies of a cascaded AoA pair.
///
/// `u = cos(t1) sin(p1) - cos(t2) sin(p2)`, `v = sin(t1) - sin(t2)`; both lie
/// in `[-2, 2]`.
pub fn cascaded_frequencies(ris_ue: &RisUePath, bs_ris: &BsRisPath) -> (f64, f64) {
    let u = bs_ris.aoa_elevation.cos() * bs_ris.aoa_azimuth.sin()
        - ris_ue.aod_elevation.cos() * ris_ue.aod_azimuth.sin();
    let v = bs_ris.aoa_elevation.sin() - ris_ue.aod_elevation.sin();
    (u, v)
}

/// `diag(b2^H) b1`, computed as `conj(b2) .* b1`. Norm is `1/sqrt(N)`.
pub fn cascaded_steering(
    ris_ue: &RisUePath,
    bs_ris: &BsRisPath,
    config: &SystemConfig,
) -> DVector<Complex64> {
    let b1 = upa_steering(
        bs_ris.aoa_azimuth,
        bs_ris.aoa_elevation,
        config.n1,
        config.n2,
        config.d_r_over_lambda,
    );
    let b2 = upa_steering(
        ris_ue.aod_azimuth,
        ris_ue.aod_elevation,
        config.n1,
        config.n2,
        config.d_r_over_lambda,
    );
    b1.zip_map(&b2, |x, y| y.conj() * x)
}

/// Path parameters of one channel realisation: shared BS-RIS paths,
/// per-user RIS-UE paths, and per-user direct channels stored as the row
/// `h_d^H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub bs_ris: Vec<BsRisPath>,
    pub ris_ue: Vec<Vec<RisUePath>>,
    pub direct: Vec<Vec<Complex64>>,
}

impl PathSet {
    /// `g_{i,k,j} = alpha_i beta_{k,j}`.
    pub fn cascaded_gain(&self, i: usize, k: usize, j: usize) -> Complex64 {
        self.bs_ris[i].gain * self.ris_ue[k][j].gain
    }

    pub fn users(&self) -> usize {
        self.ris_ue.len()
    }
}

/// Circularly-symmetric complex Gaussian with variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// Snap an angle so that its sine lies on the `g_t`-point grid over `[-1, 1)`.
pub fn snap_to_grid(angle: f64, g_t: usize) -> f64 {
    let step = 2.0 / g_t as f64;
    let idx = ((angle.sin() + 1.0) / step).round().clamp(0.0, (g_t - 1) as f64);
    (-1.0 + step * idx).asin()
}

/// Draws path angles uniformly on `[-pi/2, pi/2]` and gains from
/// `CN(0, 1/L)`.
pub fn sample_paths<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> PathSet {
    let angle = Uniform::new_inclusive(-FRAC_PI_2, FRAC_PI_2).expect("finite range");
    let bs_ris = (0..config.l1)
        .map(|_| {
            let gain = complex_gaussian(rng, 1.0 / config.l1 as f64);
            let mut aod = angle.sample(rng);
            if config.on_grid {
                aod = snap_to_grid(aod, config.g_t);
            }
            BsRisPath {
                gain,
                aod,
                aoa_azimuth: angle.sample(rng),
                aoa_elevation: angle.sample(rng),
            }
        })
        .collect();
    let ris_ue = (0..config.k)
        .map(|_| {
            (0..config.l2)
                .map(|_| RisUePath {
                    gain: complex_gaussian(rng, 1.0 / config.l2 as f64),
                    aod_azimuth: angle.sample(rng),
                    aod_elevation: angle.sample(rng),
                })
                .collect()
        })
        .collect();
    let direct = (0..config.k)
        .map(|_| {
            (0..config.m)
                .map(|_| {
                    let h = complex_gaussian(rng, 1.0 / config.m as f64);
                    if config.include_direct {
                        h
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
                .collect()
        })
        .collect();
    PathSet {
        bs_ris,
        ris_ue,
        direct,
    }
}

/// Spatial-domain cascaded channel of one user plus its direct channel.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadedChannel {
    /// `N x M` cascaded channel.
    pub h: DMatrix<Complex64>,
    /// Direct channel as the row `h_d^H`, length `M`.
    pub direct: DVector<Complex64>,
    /// Index of the user inside its generating [`PathSet`].
    pub user: usize,
}

impl CascadedChannel {
    pub fn zeros(n: usize, m: usize, user: usize) -> Self {
        CascadedChannel {
            h: DMatrix::zeros(n, m),
            direct: DVector::zeros(m),
            user,
        }
    }
}

/// `H_k = sum_i sum_j g_{i,k,j} b(cascaded AoA) a^H(AoD_i)`.
pub fn build_cascaded_channel(
    paths: &PathSet,
    user: usize,
    config: &SystemConfig,
) -> Result<CascadedChannel> {
    if user >= paths.users() {
        return Err(Error::Dimension(format!(
            "user {user} out of range for {} users",
            paths.users()
        )));
    }
    let mut h = DMatrix::zeros(config.n(), config.m);
    for (i, bs) in paths.bs_ris.iter().enumerate() {
        let a = ula_steering(bs.aod, config.m, config.d_b_over_lambda);
        let mut column = DVector::zeros(config.n());
        for (j, ue) in paths.ris_ue[user].iter().enumerate() {
            column += cascaded_steering(ue, bs, config) * paths.cascaded_gain(i, user, j);
        }
        h += column * a.adjoint();
    }
    let direct = DVector::from_column_slice(&paths.direct[user]);
    Ok(CascadedChannel { h, direct, user })
}

/// BS-RIS channel `G = sum_i alpha_i b1 a^H`, `N x M`.
pub fn bs_ris_channel(paths: &PathSet, config: &SystemConfig) -> DMatrix<Complex64> {
    let mut g = DMatrix::zeros(config.n(), config.m);
    for p in &paths.bs_ris {
        let b1 = upa_steering(
            p.aoa_azimuth,
            p.aoa_elevation,
            config.n1,
            config.n2,
            config.d_r_over_lambda,
        );
        let a = ula_steering(p.aod, config.m, config.d_b_over_lambda);
        g += b1 * a.adjoint() * p.gain;
    }
    g
}

/// RIS-UE row `h_r,k^H = sum_j beta_{k,j} b2^H`, length `N`.
pub fn ris_ue_row(paths: &PathSet, user: usize, config: &SystemConfig) -> DVector<Complex64> {
    let mut row = DVector::zeros(config.n());
    for p in &paths.ris_ue[user] {
        let b2 = upa_steering(
            p.aod_azimuth,
            p.aod_elevation,
            config.n1,
            config.n2,
            config.d_r_over_lambda,
        );
        row += b2.map(|x| x.conj()) * p.gain;
    }
    row
}

/// Checks `|phi_n| = 1` for every entry.
pub fn check_unit_modulus(phases: &[Complex64]) -> Result<()> {
    for (index, p) in phases.iter().enumerate() {
        let modulus = p.norm();
        if (modulus - 1.0).abs() > UNIT_MODULUS_TOL || !modulus.is_finite() {
            return Err(Error::NonUnitPhase { index, modulus });
        }
    }
    Ok(())
}

/// Downlink row `h_DL^H = h_d^H + phi^T H`, length `M`.
pub fn effective_downlink_channel(
    channel: &CascadedChannel,
    phases: &[Complex64],
) -> Result<DVector<Complex64>> {
    if phases.len() != channel.h.nrows() {
        return Err(Error::Dimension(format!(
            "{} phases for {} RIS elements",
            phases.len(),
            channel.h.nrows()
        )));
    }
    check_unit_modulus(phases)?;
    let phi = DVector::from_column_slice(phases);
    Ok(&channel.direct + channel.h.transpose() * phi)
}
