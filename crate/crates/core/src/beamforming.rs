//! Joint RIS phase and BS precoder design, and rate evaluation.
//!
//! The BS designs on the CSI it has (fed back or perfect): RIS phases by
//! cross-entropy optimization over a discrete phase alphabet, precoders by
//! zero forcing. Rates are always measured on the true channels.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{effective_downlink_channel, CascadedChannel};
use crate::error::{Error, Result};

/// Largest tolerated condition number of the stacked user channels.
pub const MAX_ZF_COND: f64 = 1e10;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// RIS phases restricted to `level_count` uniformly spaced values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub levels: Vec<usize>,
    pub level_count: usize,
}

impl PhaseConfig {
    pub fn constant(n: usize, level_count: usize, level: usize) -> Self {
        PhaseConfig {
            levels: vec![level % level_count; n],
            level_count,
        }
    }

    pub fn random<R: Rng + ?Sized>(n: usize, level_count: usize, rng: &mut R) -> Self {
        PhaseConfig {
            levels: (0..n).map(|_| rng.random_range(0..level_count)).collect(),
            level_count,
        }
    }

    /// `exp(j 2 pi p / P)` per element.
    pub fn phases(&self) -> Vec<Complex64> {
        let table = phase_table(self.level_count);
        self.levels.iter().map(|&p| table[p]).collect()
    }
}

fn phase_table(level_count: usize) -> Vec<Complex64> {
    (0..level_count)
        .map(|p| Complex64::from_polar(1.0, TAU * p as f64 / level_count as f64))
        .collect()
}

/// Cross-entropy optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CeoParams {
    pub population: usize,
    pub elite_fraction: f64,
    pub iterations: usize,
    pub smoothing: f64,
    pub phase_levels: usize,
    pub seed: u64,
}

impl Default for CeoParams {
    fn default() -> Self {
        CeoParams {
            population: 200,
            elite_fraction: 0.2,
            iterations: 30,
            smoothing: 0.7,
            phase_levels: 4,
            seed: 0,
        }
    }
}

impl CeoParams {
    pub fn validate(&self) -> Result<()> {
        if self.population < 10 {
            return Err(Error::InvalidConfig(format!(
                "CEO population {} below 10",
                self.population
            )));
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "elite fraction {} outside (0, 1)",
                self.elite_fraction
            )));
        }
        if !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "smoothing {} outside (0, 1]",
                self.smoothing
            )));
        }
        if self.phase_levels < 2 {
            return Err(Error::InvalidConfig("at least 2 phase levels required".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("at least one CEO iteration required".into()));
        }
        Ok(())
    }

    pub fn elite_count(&self) -> usize {
        ((self.elite_fraction * self.population as f64).ceil() as usize).clamp(1, self.population)
    }
}

/// CSI held at the BS in factored form: user `k`'s cascaded channel is
/// `sum_i coeffs_k[i] atoms[:, i]^H`, plus a direct row.
///
/// Every scheme shares one atom set across users (the BS-side AoDs), which
/// keeps `phi^T H_k` cheap: `r` inner products of length `N`.
#[derive(Debug, Clone)]
pub struct BsCsi {
    n: usize,
    m: usize,
    rank: usize,
    /// `rank x M`, row `i` is `atoms[:, i]^H`; `None` means the identity.
    atom_rows: Option<Vec<Complex64>>,
    /// Per user, `rank x N` (row `i` holds column `i` of the factor).
    coeffs: Vec<Vec<Complex64>>,
    direct: Vec<Vec<Complex64>>,
}

impl BsCsi {
    /// Dense CSI: atoms are the identity, coefficients the columns of `H`.
    pub fn from_dense(channels: &[CascadedChannel]) -> Self {
        let (n, m) = channels.first().map_or((0, 0), |c| c.h.shape());
        let coeffs = channels
            .iter()
            .map(|c| c.h.iter().cloned().collect())
            .collect();
        let direct = channels.iter().map(|c| c.direct.iter().cloned().collect()).collect();
        BsCsi {
            n,
            m,
            rank: m,
            atom_rows: None,
            coeffs,
            direct,
        }
    }

    /// `H_k = sum_i columns[k][i] atoms[:, i]^H`.
    pub fn from_factors(
        atoms: &DMatrix<Complex64>,
        columns: &[Vec<DVector<Complex64>>],
        direct: &[DVector<Complex64>],
    ) -> Result<Self> {
        let (m, rank) = atoms.shape();
        if columns.len() != direct.len() {
            return Err(Error::Dimension("user count mismatch".into()));
        }
        let n = columns.first().and_then(|c| c.first()).map_or(0, |c| c.len());
        let mut coeffs = Vec::with_capacity(columns.len());
        for cols in columns {
            if cols.len() != rank || cols.iter().any(|c| c.len() != n) {
                return Err(Error::Dimension("factor shape mismatch".into()));
            }
            coeffs.push(cols.iter().flat_map(|c| c.iter().cloned()).collect());
        }
        if direct.iter().any(|d| d.len() != m) {
            return Err(Error::Dimension("direct channel length".into()));
        }
        let atom_rows = atoms.column_iter().flat_map(|a| a.iter().map(|x| x.conj()).collect::<Vec<_>>()).collect();
        Ok(BsCsi {
            n,
            m,
            rank,
            atom_rows: Some(atom_rows),
            coeffs,
            direct: direct.iter().map(|d| d.iter().cloned().collect()).collect(),
        })
    }

    pub fn users(&self) -> usize {
        self.coeffs.len()
    }

    pub fn elements(&self) -> usize {
        self.n
    }

    pub fn antennas(&self) -> usize {
        self.m
    }

    /// Spatial-domain matrix of user `k` (for diagnostics).
    pub fn dense(&self, k: usize) -> DMatrix<Complex64> {
        let mut h = DMatrix::zeros(self.n, self.m);
        for i in 0..self.rank {
            for row in 0..self.n {
                let c = self.coeffs[k][i * self.n + row];
                match &self.atom_rows {
                    Some(a) => {
                        for col in 0..self.m {
                            h[(row, col)] += c * a[i * self.m + col];
                        }
                    }
                    None => h[(row, i)] += c,
                }
            }
        }
        h
    }

    /// Writes user `k`'s row `h_d^H + phi^T H_k` into `out`, with the
    /// phases given per element by `phase`.
    fn row_into(&self, k: usize, phase: impl Fn(usize) -> Complex64, mix: &mut [Complex64], out: &mut [Complex64]) {
        let coeffs = &self.coeffs[k];
        for (i, slot) in mix.iter_mut().enumerate() {
            let c = &coeffs[i * self.n..(i + 1) * self.n];
            *slot = c.iter().enumerate().map(|(n, x)| phase(n) * x).sum();
        }
        out.copy_from_slice(&self.direct[k]);
        match &self.atom_rows {
            Some(a) => {
                for (i, &w) in mix.iter().enumerate() {
                    for (o, x) in out.iter_mut().zip(&a[i * self.m..(i + 1) * self.m]) {
                        *o += w * x;
                    }
                }
            }
            None => {
                for (o, w) in out.iter_mut().zip(mix.iter()) {
                    *o += w;
                }
            }
        }
    }

    /// Effective downlink rows for arbitrary phases.
    pub fn effective_rows(&self, phases: &[Complex64]) -> Result<Vec<DVector<Complex64>>> {
        if phases.len() != self.n {
            return Err(Error::Dimension(format!(
                "{} phases for {} elements",
                phases.len(),
                self.n
            )));
        }
        crate::channel::check_unit_modulus(phases)?;
        let mut mix = vec![ZERO; self.rank];
        let mut out = vec![ZERO; self.m];
        Ok((0..self.users())
            .map(|k| {
                self.row_into(k, |n| phases[n], &mut mix, &mut out);
                DVector::from_column_slice(&out)
            })
            .collect())
    }
}

/// ZF directions `H^H (H H^H)^{-1}` with unit-norm columns, for channel
/// rows `h_k^H` stacked into `H`.
pub fn zf_precoder(rows: &[DVector<Complex64>]) -> Result<Vec<DVector<Complex64>>> {
    let k = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if k == 0 || k > m {
        return Err(Error::DegenerateChannel { cond: f64::INFINITY });
    }
    let h = DMatrix::from_fn(k, m, |r, c| rows[r][c]);
    let sv = h.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= MAX_ZF_COND) {
        return Err(Error::DegenerateChannel { cond });
    }
    let gram = &h * h.adjoint();
    let inv = gram
        .try_inverse()
        .ok_or(Error::DegenerateChannel { cond: f64::INFINITY })?;
    let v = h.adjoint() * inv;
    Ok(v.column_iter()
        .map(|c| {
            let n = c.norm();
            c.into_owned() / Complex64::new(n, 0.0)
        })
        .collect())
}

/// Per-realisation rates of all users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub per_user: Vec<f64>,
    /// Mean over users, bits/s/Hz.
    pub per_user_rate: f64,
    pub sum_rate: f64,
}

/// `log2(1 + (g/K)|h_k^H v_k|^2 / (1 + (g/K) sum_{i != k} |h_k^H v_i|^2))`.
pub fn rates_from_rows(rows: &[DVector<Complex64>], precoders: &[DVector<Complex64>], gamma: f64) -> RateReport {
    let k = precoders.len().max(1) as f64;
    let per_user: Vec<f64> = rows
        .iter()
        .enumerate()
        .map(|(u, row)| {
            let mut signal = 0.0;
            let mut interference = 0.0;
            for (i, v) in precoders.iter().enumerate() {
                let p = row.iter().zip(v.iter()).map(|(h, w)| h * w).sum::<Complex64>().norm_sqr();
                if i == u {
                    signal = p;
                } else {
                    interference += p;
                }
            }
            (1.0 + gamma / k * signal / (1.0 + gamma / k * interference)).log2()
        })
        .collect();
    let sum_rate: f64 = per_user.iter().sum();
    RateReport {
        per_user_rate: sum_rate / per_user.len().max(1) as f64,
        sum_rate,
        per_user,
    }
}

/// Rates on the true channels for the given phases and precoders.
pub fn per_user_rate(
    true_channels: &[CascadedChannel],
    phases: &[Complex64],
    precoders: &[DVector<Complex64>],
    gamma: f64,
) -> Result<RateReport> {
    let rows = true_channels
        .iter()
        .map(|c| effective_downlink_channel(c, phases))
        .collect::<Result<Vec<_>>>()?;
    Ok(rates_from_rows(&rows, precoders, gamma))
}

/// Mean per-user rate that ZF achieves when the CSI is exact:
/// `(1/K) sum_k log2(1 + (g/K) / [(H H^H)^{-1}]_kk)`. `None` when the
/// stacked rows are numerically rank deficient.
fn zf_objective(
    rows: &[Complex64],
    k: usize,
    m: usize,
    gamma: f64,
    gram: &mut [Complex64],
    xs: &mut [Complex64],
) -> Option<f64> {
    for a in 0..k {
        for b in 0..=a {
            let ra = &rows[a * m..(a + 1) * m];
            let rb = &rows[b * m..(b + 1) * m];
            let s: Complex64 = ra.iter().zip(rb).map(|(x, y)| x * y.conj()).sum();
            gram[a * k + b] = s;
        }
    }
    // Cholesky in place, lower triangle.
    let max_diag = (0..k).map(|a| gram[a * k + a].re).fold(0.0, f64::max);
    if max_diag <= 0.0 {
        return None;
    }
    for j in 0..k {
        let mut d = gram[j * k + j].re;
        for p in 0..j {
            d -= gram[j * k + p].norm_sqr();
        }
        // pivot^2 / max diag bounds 1 / cond(H H^H) from above
        if !(d > max_diag / (MAX_ZF_COND * MAX_ZF_COND)) {
            return None;
        }
        let d = d.sqrt();
        gram[j * k + j] = Complex64::new(d, 0.0);
        for i in j + 1..k {
            let mut s = gram[i * k + j];
            for p in 0..j {
                s -= gram[i * k + p] * gram[j * k + p].conj();
            }
            gram[i * k + j] = s / d;
        }
    }
    // [G^{-1}]_kk = || L^{-1} e_k ||^2, solve column by column.
    let gk = gamma / k as f64;
    let mut total = 0.0;
    for col in 0..k {
        let mut norm = 0.0;
        for i in 0..k {
            if i < col {
                xs[i] = ZERO;
                continue;
            }
            let mut s = if i == col { Complex64::new(1.0, 0.0) } else { ZERO };
            for p in col..i {
                s -= gram[i * k + p] * xs[p];
            }
            xs[i] = s / gram[i * k + i].re;
            norm += xs[i].norm_sqr();
        }
        total += (1.0 + gk / norm).log2();
    }
    Some(total / k as f64)
}

/// Objective of one phase configuration on the given CSI.
pub fn csi_objective(csi: &BsCsi, phases: &PhaseConfig, gamma: f64) -> Option<f64> {
    let table = phase_table(phases.level_count);
    let mut eval = Evaluator::new(csi);
    eval.objective(csi, &table, &phases.levels, gamma)
}

struct Evaluator {
    rows: Vec<Complex64>,
    mix: Vec<Complex64>,
    gram: Vec<Complex64>,
    solve: Vec<Complex64>,
}

impl Evaluator {
    fn new(csi: &BsCsi) -> Self {
        Evaluator {
            rows: vec![ZERO; csi.users() * csi.m],
            mix: vec![ZERO; csi.rank],
            gram: vec![ZERO; csi.users() * csi.users()],
            solve: vec![ZERO; csi.users()],
        }
    }

    fn objective(&mut self, csi: &BsCsi, table: &[Complex64], levels: &[usize], gamma: f64) -> Option<f64> {
        let m = csi.m;
        for k in 0..csi.users() {
            let out = &mut self.rows[k * m..(k + 1) * m];
            csi.row_into(k, |n| table[levels[n]], &mut self.mix, out);
        }
        zf_objective(&self.rows, csi.users(), m, gamma, &mut self.gram, &mut self.solve)
    }
}

/// Result of a CEO run.
#[derive(Debug, Clone)]
pub struct CeoOutcome {
    pub best: PhaseConfig,
    pub best_objective: f64,
    /// Best objective seen up to and including each iteration.
    pub trace: Vec<f64>,
    /// Final `N x P` sampling distribution, row-major.
    pub probabilities: Vec<f64>,
}

/// Cross-entropy search over discrete RIS phases.
///
/// Each element carries a categorical distribution over the `P` phase
/// levels, initially uniform. Every iteration samples `S` configurations,
/// scores each by the ZF mean per-user rate on `csi`, keeps as elites all
/// samples scoring at least the `ceil(rho S)`-th best score, and moves the
/// distribution towards the elites' empirical frequencies with weight
/// `smoothing`. Returns the best configuration ever sampled; samples with a
/// rank-deficient channel stack are skipped.
pub fn ceo_optimize(csi: &BsCsi, gamma: f64, params: &CeoParams) -> Result<CeoOutcome> {
    params.validate()?;
    let n = csi.elements();
    let p = params.phase_levels;
    let s = params.population;
    let table = phase_table(p);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut probs = vec![1.0 / p as f64; n * p];
    let mut samples = vec![0usize; s * n];
    let mut scores: Vec<Option<f64>> = vec![None; s];
    let mut order: Vec<usize> = Vec::with_capacity(s);
    let mut counts = vec![0.0; n * p];
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut trace = Vec::with_capacity(params.iterations);
    let mut eval = Evaluator::new(csi);

    for _ in 0..params.iterations {
        for (idx, sample) in samples.chunks_exact_mut(n).enumerate() {
            for (e, level) in sample.iter_mut().enumerate() {
                *level = draw(&probs[e * p..(e + 1) * p], rng.random::<f64>());
            }
            scores[idx] = eval.objective(csi, &table, sample, gamma);
        }
        for (idx, score) in scores.iter().enumerate() {
            if let Some(v) = *score {
                if best.as_ref().is_none_or(|(b, _)| v > *b) {
                    best = Some((v, samples[idx * n..(idx + 1) * n].to_vec()));
                }
            }
        }
        order.clear();
        order.extend((0..s).filter(|&i| scores[i].is_some()));
        if !order.is_empty() {
            order.sort_by(|&a, &b| {
                scores[b]
                    .unwrap()
                    .total_cmp(&scores[a].unwrap())
                    .then(a.cmp(&b))
            });
            let cutoff = params.elite_count().min(order.len());
            let threshold = scores[order[cutoff - 1]].unwrap();
            counts.iter_mut().for_each(|c| *c = 0.0);
            let mut elites = 0usize;
            for &i in order.iter().take_while(|&&i| scores[i].unwrap() >= threshold) {
                elites += 1;
                for (e, &level) in samples[i * n..(i + 1) * n].iter().enumerate() {
                    counts[e * p + level] += 1.0;
                }
            }
            let lambda = params.smoothing;
            for (pr, c) in probs.iter_mut().zip(&counts) {
                *pr = lambda * (c / elites as f64) + (1.0 - lambda) * *pr;
            }
        }
        trace.push(best.as_ref().map_or(f64::NAN, |(b, _)| *b));
    }

    let (best_objective, levels) = best.ok_or(Error::DegenerateChannel { cond: f64::INFINITY })?;
    Ok(CeoOutcome {
        best: PhaseConfig {
            levels,
            level_count: p,
        },
        best_objective,
        trace,
        probabilities: probs,
    })
}

fn draw(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (level, &pr) in probs.iter().enumerate() {
        acc += pr;
        if u < acc {
            return level;
        }
    }
    probs.len() - 1
}

/// CEO phases and ZF precoders designed on `csi`, evaluated on the true
/// channels.
pub fn design_and_evaluate(
    csi: &BsCsi,
    true_channels: &[CascadedChannel],
    gamma: f64,
    params: &CeoParams,
) -> Result<(RateReport, PhaseConfig)> {
    let outcome = ceo_optimize(csi, gamma, params)?;
    let phases = outcome.best.phases();
    let precoders = zf_precoder(&csi.effective_rows(&phases)?)?;
    Ok((per_user_rate(true_channels, &phases, &precoders, gamma)?, outcome.best))
}
