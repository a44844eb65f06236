//! AoD dictionary, hybrid-domain conversion and support extraction.
//!
//! The hybrid-domain channel keeps the RIS dimension spatial and moves the
//! BS dimension to the angular domain: `H = H~ Theta_T^H`. Only the `L1`
//! columns at the AoD grid indexes are non-zero, and those indexes are the
//! same for every user.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::channel::{cascaded_steering_from_freq, ula_steering, CascadedChannel};
use crate::error::{Error, Result};
use crate::linalg::right_pseudo_factor;

/// Largest tolerated condition number of `Theta_S^H Theta_S`.
pub const MAX_SUPPORT_COND: f64 = 1e8;

/// `M x G_t` dictionary of ULA responses on a uniform sine grid.
#[derive(Debug, Clone)]
pub struct AodDictionary {
    pub atoms: DMatrix<Complex64>,
    pub grid: Vec<f64>,
    pub spacing: f64,
}

impl AodDictionary {
    pub fn resolution(&self) -> usize {
        self.grid.len()
    }

    pub fn antennas(&self) -> usize {
        self.atoms.nrows()
    }

    /// Sub-matrix of the selected columns, in the given order.
    pub fn select(&self, support: &[usize]) -> Result<DMatrix<Complex64>> {
        if let Some(&bad) = support.iter().find(|&&g| g >= self.resolution()) {
            return Err(Error::Dimension(format!(
                "grid index {bad} out of range for resolution {}",
                self.resolution()
            )));
        }
        Ok(self.atoms.select_columns(support))
    }
}

/// Grid point `g` of a `g_t`-point uniform grid over `[-1, 1)`.
pub fn grid_point(g: usize, g_t: usize) -> f64 {
    -1.0 + 2.0 * g as f64 / g_t as f64
}

pub fn build_dictionary(m: usize, g_t: usize, l1: usize, spacing: f64) -> Result<AodDictionary> {
    if g_t < l1 {
        return Err(Error::InvalidConfig(format!(
            "grid resolution {g_t} smaller than path count {l1}"
        )));
    }
    let grid: Vec<f64> = (0..g_t).map(|g| grid_point(g, g_t)).collect();
    let mut atoms = DMatrix::zeros(m, g_t);
    for (g, s) in grid.iter().enumerate() {
        atoms.set_column(g, &ula_steering(s.asin(), m, spacing));
    }
    Ok(AodDictionary {
        atoms,
        grid,
        spacing,
    })
}

/// Nearest grid index of `sin(phi)`; ties go to the lower index.
pub fn aod_to_grid_index(phi: f64, g_t: usize) -> usize {
    let x = phi.sin();
    let t = ((x + 1.0) * g_t as f64 / 2.0).floor();
    let lo = (t.max(0.0) as usize).min(g_t - 1);
    let hi = (lo + 1).min(g_t - 1);
    if (x - grid_point(hi, g_t)).abs() < (x - grid_point(lo, g_t)).abs() {
        hi
    } else {
        lo
    }
}

/// Non-zero columns of one user's hybrid-domain channel.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridChannel {
    /// Grid indexes of the non-zero columns, strictly increasing.
    pub support: Vec<usize>,
    /// Column `i` belongs to `support[i]`; each has length `N`.
    pub columns: Vec<DVector<Complex64>>,
}

/// Least-squares column coefficients of `h` on the given atoms:
/// `H Theta_S (Theta_S^H Theta_S)^{-1}`.
pub fn extract_with_atoms(
    h: &DMatrix<Complex64>,
    atoms: &DMatrix<Complex64>,
) -> Result<Vec<DVector<Complex64>>> {
    if h.ncols() != atoms.nrows() {
        return Err(Error::Dimension(format!(
            "channel has {} columns, atoms have {} rows",
            h.ncols(),
            atoms.nrows()
        )));
    }
    let coeffs = h * right_pseudo_factor(atoms, MAX_SUPPORT_COND)?;
    Ok(coeffs.column_iter().map(|c| c.into_owned()).collect())
}

/// `sum_i columns[i] atoms[:, i]^H`.
pub fn reconstruct_with_atoms(
    columns: &[DVector<Complex64>],
    atoms: &DMatrix<Complex64>,
    n: usize,
) -> DMatrix<Complex64> {
    let mut h = DMatrix::zeros(n, atoms.nrows());
    for (col, atom) in columns.iter().zip(atoms.column_iter()) {
        h += col * atom.adjoint();
    }
    h
}

pub fn extract_hybrid(
    channel: &CascadedChannel,
    support: &[usize],
    dict: &AodDictionary,
) -> Result<HybridChannel> {
    if support.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::IllConditioned {
            cond: f64::INFINITY,
        });
    }
    let atoms = dict.select(support)?;
    Ok(HybridChannel {
        support: support.to_vec(),
        columns: extract_with_atoms(&channel.h, &atoms)?,
    })
}

pub fn reconstruct_spatial(hybrid: &HybridChannel, dict: &AodDictionary) -> Result<DMatrix<Complex64>> {
    let atoms = dict.select(&hybrid.support)?;
    let n = hybrid.columns.first().map_or(0, |c| c.len());
    Ok(reconstruct_with_atoms(&hybrid.columns, &atoms, n))
}

/// Support detection: greedy picks by residual energy in `R Theta_T` with a
/// least-squares refit after each pick, then index exchanges while they
/// increase the energy captured by the support. Returned indexes are
/// sorted ascending.
///
/// Plain top-`L1` ranking of `H Theta_T` energies would pick the neighbours
/// of the strongest path on an overcomplete grid. The greedy pass alone can
/// still settle between two close paths; the exchange pass moves such a
/// pick onto the grid point that explains the channel.
pub fn detect_support(channel: &CascadedChannel, dict: &AodDictionary, l1: usize) -> Result<Vec<usize>> {
    let h = &channel.h;
    let mut chosen: Vec<usize> = Vec::with_capacity(l1);
    let mut residual = h.clone();
    for _ in 0..l1.min(dict.resolution()) {
        let proj = &residual * &dict.atoms;
        let best = proj
            .column_iter()
            .enumerate()
            .filter(|(g, _)| !chosen.contains(g))
            .map(|(g, c)| (g, c.norm_squared()))
            .fold(None, |acc: Option<(usize, f64)>, (g, e)| match acc {
                Some((_, be)) if be >= e => acc,
                _ => Some((g, e)),
            });
        let Some((g, energy)) = best else { break };
        chosen.push(g);
        if energy == 0.0 {
            continue;
        }
        let atoms = dict.atoms.select_columns(&chosen);
        let Ok(columns) = extract_with_atoms(h, &atoms) else {
            continue;
        };
        residual = h - reconstruct_with_atoms(&columns, &atoms, h.nrows());
    }
    refine_support(h, dict, &mut chosen);
    chosen.sort_unstable();
    Ok(chosen)
}

const MAX_EXCHANGE_PASSES: usize = 16;

/// `tr((Theta_S^H Theta_S)^{-1} (H Theta_S)^H (H Theta_S))`, the energy of
/// `H` in the row space of the selected atoms; `None` if ill-conditioned.
fn captured_energy(proj: &DMatrix<Complex64>, dict: &AodDictionary, support: &[usize]) -> Option<f64> {
    let atoms = dict.atoms.select_columns(support);
    let gram = atoms.adjoint() * &atoms;
    let chol = gram.cholesky()?;
    // unit atoms: the smallest squared pivot bounds the smallest eigenvalue
    let min_pivot = chol.l_dirty().diagonal().iter().map(|d| d.norm_sqr()).fold(f64::INFINITY, f64::min);
    if min_pivot * MAX_SUPPORT_COND < 1.0 {
        return None;
    }
    let y = proj.select_columns(support);
    let inner = y.adjoint() * y;
    Some(chol.solve(&inner).trace().re)
}

/// Grid distance covered by the joint two-index moves.
const PAIR_MOVE_RADIUS: isize = 4;

fn refine_support(h: &DMatrix<Complex64>, dict: &AodDictionary, support: &mut [usize]) {
    if support.is_empty() {
        return;
    }
    let proj = h * &dict.atoms;
    let Some(mut current) = captured_energy(&proj, dict, support) else {
        return;
    };
    let tol = 1e-12 * h.norm_squared();
    for _ in 0..MAX_EXCHANGE_PASSES {
        let single = exchange_singles(&proj, dict, support, &mut current, tol);
        let pair = !single && move_pairs(&proj, dict, support, &mut current, tol);
        if !single && !pair {
            break;
        }
    }
}

fn exchange_singles(
    proj: &DMatrix<Complex64>,
    dict: &AodDictionary,
    support: &mut [usize],
    current: &mut f64,
    tol: f64,
) -> bool {
    let mut improved = false;
    for p in 0..support.len() {
        let keep = support[p];
        let mut best = (keep, *current);
        for g in 0..dict.resolution() {
            if support.contains(&g) {
                continue;
            }
            support[p] = g;
            if let Some(e) = captured_energy(proj, dict, support) {
                if e > best.1 + tol {
                    best = (g, e);
                }
            }
        }
        support[p] = best.0;
        if best.0 != keep {
            *current = best.1;
            improved = true;
        }
    }
    improved
}

/// Shifts two indexes at once by up to `PAIR_MOVE_RADIUS`; single moves
/// cannot leave the local optimum where two close paths are both
/// represented by slightly misplaced atoms.
fn move_pairs(
    proj: &DMatrix<Complex64>,
    dict: &AodDictionary,
    support: &mut [usize],
    current: &mut f64,
    tol: f64,
) -> bool {
    let g_t = dict.resolution() as isize;
    let mut improved = false;
    for p in 0..support.len() {
        for q in p + 1..support.len() {
            let (kp, kq) = (support[p], support[q]);
            let mut best = (kp, kq, *current);
            for dp in -PAIR_MOVE_RADIUS..=PAIR_MOVE_RADIUS {
                for dq in -PAIR_MOVE_RADIUS..=PAIR_MOVE_RADIUS {
                    // At half-wavelength spacing the first and last indexes are neighbours.
                    let gp = (kp as isize + dp).rem_euclid(g_t) as usize;
                    let gq = (kq as isize + dq).rem_euclid(g_t) as usize;
                    if dp == 0 || dq == 0 || gp == gq {
                        continue;
                    }
                    let clash = support
                        .iter()
                        .enumerate()
                        .any(|(i, &g)| i != p && i != q && (g == gp || g == gq));
                    if clash {
                        continue;
                    }
                    support[p] = gp;
                    support[q] = gq;
                    if let Some(e) = captured_energy(proj, dict, support) {
                        if e > best.2 + tol {
                            best = (gp, gq, e);
                        }
                    }
                }
            }
            support[p] = best.0;
            support[q] = best.1;
            if (best.0, best.1) != (kp, kq) {
                *current = best.2;
                improved = true;
            }
        }
    }
    improved
}

/// Diagnostic only: the `count` strongest rows of `Theta_R^H H`, where
/// `Theta_R` is the orthonormal 2-D DFT basis of the `n1 x n2` RIS. Rows
/// are returned sorted.
pub fn ris_row_support(
    h: &DMatrix<Complex64>,
    n1: usize,
    n2: usize,
    spacing: f64,
    count: usize,
) -> Vec<usize> {
    let n = n1 * n2;
    let period = 1.0 / spacing;
    let mut energies: Vec<(usize, f64)> = (0..n)
        .map(|r| {
            let (row, col) = (r / n1, r % n1);
            let u = -period / 2.0 + period * col as f64 / n1 as f64;
            let v = -period / 2.0 + period * row as f64 / n2 as f64;
            let atom = cascaded_steering_from_freq(u, v, n1, n2, spacing) * Complex64::new((n as f64).sqrt(), 0.0);
            let proj = atom.adjoint() * h;
            (r, proj.norm_squared())
        })
        .collect();
    energies.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut rows: Vec<usize> = energies.into_iter().take(count).map(|(r, _)| r).collect();
    rows.sort_unstable();
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_cascaded_channel, sample_paths, snap_to_grid, PathSet};
    use crate::config::SystemConfig;
    use crate::linalg::relative_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn critically_sampled_dictionary_is_orthonormal() {
        let d = build_dictionary(4, 4, 1, 0.5).unwrap();
        let gram = d.atoms.adjoint() * &d.atoms;
        let eye = DMatrix::<Complex64>::identity(4, 4);
        assert!((gram - eye).norm() < 1e-10);
    }

    #[test]
    fn dictionary_shape_and_norms() {
        let d = build_dictionary(32, 512, 4, 0.5).unwrap();
        assert_eq!(d.atoms.shape(), (32, 512));
        for c in d.atoms.column_iter() {
            assert!((c.norm() - 1.0).abs() < 1e-12);
        }
        assert!(build_dictionary(32, 3, 4, 0.5).is_err());
    }

    #[test]
    fn grid_index_rules() {
        let g_t = 64;
        assert_eq!(aod_to_grid_index(grid_point(17, g_t).asin(), g_t), 17);
        assert_eq!(aod_to_grid_index(-std::f64::consts::FRAC_PI_2, g_t), 0);
        // midway between s_3 and s_4 of an 8-point grid: -0.125
        assert_eq!(aod_to_grid_index((-0.125f64).asin(), 8), 3);
        assert_eq!(aod_to_grid_index(std::f64::consts::FRAC_PI_2, g_t), g_t - 1);
    }

    fn on_grid_paths(cfg: &SystemConfig, idx: &[usize], seed: u64) -> PathSet {
        let mut paths = sample_paths(cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        for (p, &g) in paths.bs_ris.iter_mut().zip(idx) {
            p.aod = grid_point(g, cfg.g_t).asin();
        }
        paths
    }

    #[test]
    fn single_path_residual() {
        let cfg = SystemConfig {
            l1: 1,
            l2: 1,
            k: 1,
            ..SystemConfig::default()
        };
        let dict = build_dictionary(cfg.m, cfg.g_t, cfg.l1, 0.5).unwrap();
        let mut paths = on_grid_paths(&cfg, &[200], 1);
        paths.bs_ris[0].gain = Complex64::new(1.0, 0.0);
        paths.ris_ue[0][0].gain = Complex64::new(1.0, 0.0);
        let ch = build_cascaded_channel(&paths, 0, &cfg).unwrap();
        let hy = extract_hybrid(&ch, &[200], &dict).unwrap();
        let a = dict.atoms.column(200);
        let resid = &ch.h - &hy.columns[0] * a.adjoint();
        assert!(resid.norm() < 1e-10);
    }

    #[test]
    fn on_grid_round_trip() {
        let cfg = SystemConfig::default();
        let dict = build_dictionary(cfg.m, cfg.g_t, cfg.l1, 0.5).unwrap();
        let support = [10, 100, 300, 500];
        let paths = on_grid_paths(&cfg, &support, 4);
        for k in 0..cfg.k {
            let ch = build_cascaded_channel(&paths, k, &cfg).unwrap();
            let hy = extract_hybrid(&ch, &support, &dict).unwrap();
            let back = reconstruct_spatial(&hy, &dict).unwrap();
            assert!(relative_error(&back, &ch.h) < 1e-8);
        }
    }

    #[test]
    fn zero_channel_zero_columns() {
        let dict = build_dictionary(8, 16, 2, 0.5).unwrap();
        let ch = CascadedChannel::zeros(4, 8, 0);
        let hy = extract_hybrid(&ch, &[2, 9], &dict).unwrap();
        assert!(hy.columns.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn colliding_support_rejected() {
        let dict = build_dictionary(8, 16, 2, 0.5).unwrap();
        let ch = CascadedChannel::zeros(4, 8, 0);
        assert!(matches!(
            extract_hybrid(&ch, &[3, 3], &dict),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn reconstruct_rank_one() {
        let dict = build_dictionary(8, 16, 1, 0.5).unwrap();
        let mut e1 = DVector::zeros(4);
        e1[0] = Complex64::new(1.0, 0.0);
        let hy = HybridChannel {
            support: vec![5],
            columns: vec![e1.clone()],
        };
        let h = reconstruct_spatial(&hy, &dict).unwrap();
        let expected = e1 * dict.atoms.column(5).adjoint();
        assert!((h - expected).norm() < 1e-15);
    }

    #[test]
    fn detects_on_grid_support() {
        let cfg = SystemConfig::default();
        let dict = build_dictionary(cfg.m, cfg.g_t, cfg.l1, 0.5).unwrap();
        let support = [10, 100, 300, 500];
        let paths = on_grid_paths(&cfg, &support, 8);
        for k in 0..cfg.k {
            let ch = build_cascaded_channel(&paths, k, &cfg).unwrap();
            assert_eq!(detect_support(&ch, &dict, 4).unwrap(), support.to_vec());
            let mut scaled = ch.clone();
            scaled.h *= Complex64::new(-3.5, 1.0);
            assert_eq!(detect_support(&scaled, &dict, 4).unwrap(), support.to_vec());
        }
    }

    #[test]
    fn detects_single_path() {
        let cfg = SystemConfig {
            l1: 1,
            on_grid: true,
            ..SystemConfig::default()
        };
        let dict = build_dictionary(cfg.m, cfg.g_t, cfg.l1, 0.5).unwrap();
        let paths = sample_paths(&cfg, &mut ChaCha8Rng::seed_from_u64(77));
        let truth = aod_to_grid_index(snap_to_grid(paths.bs_ris[0].aod, cfg.g_t), cfg.g_t);
        let ch = build_cascaded_channel(&paths, 0, &cfg).unwrap();
        assert_eq!(detect_support(&ch, &dict, 1).unwrap(), vec![truth]);
    }
}
