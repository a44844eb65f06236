//! RVQ codebooks and the angle-adaptive subspace codebook.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{cascaded_steering_from_freq, complex_gaussian};
use crate::codec::quantize::FreqIndex;
use crate::config::SystemConfig;
use crate::error::{Error, Result};

/// `sin^2` of the angle between `a` and `b`: `1 - |a^H b|^2 / (|a|^2 |b|^2)`.
pub fn chordal_distance_sq(a: &DVector<Complex64>, b: &DVector<Complex64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("lengths {} and {}", a.len(), b.len())));
    }
    let na = a.norm_squared();
    let nb = b.norm_squared();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let inner = a.dotc(b).norm_sqr();
    Ok((1.0 - inner / (na * nb)).clamp(0.0, 1.0))
}

/// Outcome of a codeword search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodewordChoice {
    pub index: usize,
    pub distance: f64,
}

/// A finite set of codewords searched by chordal distance.
pub trait Codebook {
    fn size(&self) -> usize;

    fn dim(&self) -> usize;

    fn codeword(&self, q: usize) -> DVector<Complex64>;

    /// Exhaustive argmin of the chordal distance; ties go to the lowest index.
    fn select(&self, column: &DVector<Complex64>) -> Result<CodewordChoice> {
        if column.norm_squared() == 0.0 {
            return Err(Error::ZeroNorm);
        }
        let mut best = CodewordChoice {
            index: 0,
            distance: f64::INFINITY,
        };
        for q in 0..self.size() {
            let d = chordal_distance_sq(column, &self.codeword(q)).unwrap_or(1.0);
            if d < best.distance {
                best = CodewordChoice { index: q, distance: d };
            }
        }
        Ok(best)
    }
}

/// `2^B` unit-norm i.i.d. complex Gaussian vectors, reproducible from a seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RvqCodebook {
    dim: usize,
    data: Vec<Complex64>,
}

impl RvqCodebook {
    pub fn random(bits: u32, dim: usize, seed: u64) -> Self {
        let size = 1usize << bits;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(size * dim);
        for _ in 0..size {
            let start = data.len();
            data.extend((0..dim).map(|_| complex_gaussian(&mut rng, 1.0)));
            let norm = data[start..].iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            for x in &mut data[start..] {
                *x /= norm;
            }
        }
        RvqCodebook { dim, data }
    }

    pub fn from_vectors(vectors: &[DVector<Complex64>]) -> Result<Self> {
        let dim = vectors.first().map_or(0, |v| v.len());
        let mut data = Vec::with_capacity(vectors.len() * dim);
        for v in vectors {
            if v.len() != dim {
                return Err(Error::Dimension("codewords of unequal length".into()));
            }
            let n = v.norm();
            if n == 0.0 {
                return Err(Error::ZeroNorm);
            }
            data.extend(v.iter().map(|x| x / n));
        }
        Ok(RvqCodebook { dim, data })
    }

    pub fn vector(&self, q: usize) -> &[Complex64] {
        &self.data[q * self.dim..(q + 1) * self.dim]
    }
}

impl Codebook for RvqCodebook {
    fn size(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn codeword(&self, q: usize) -> DVector<Complex64> {
        DVector::from_column_slice(self.vector(q))
    }

    /// Codewords are unit norm, so the search only needs `|c^H h|^2`.
    fn select(&self, column: &DVector<Complex64>) -> Result<CodewordChoice> {
        if column.len() != self.dim {
            return Err(Error::Dimension(format!(
                "column length {} for codebook dimension {}",
                column.len(),
                self.dim
            )));
        }
        let energy = column.norm_squared();
        if energy == 0.0 {
            return Err(Error::ZeroNorm);
        }
        let h = column.as_slice();
        let mut best = (0usize, f64::NEG_INFINITY);
        for (q, c) in self.data.chunks_exact(self.dim).enumerate() {
            let inner: Complex64 = c.iter().zip(h).map(|(c, h)| c.conj() * h).sum();
            let gain = inner.norm_sqr();
            if gain > best.1 {
                best = (q, gain);
            }
        }
        Ok(CodewordChoice {
            index: best.0,
            distance: (1.0 - best.1 / energy).clamp(0.0, 1.0),
        })
    }
}

/// Codewords `c_q = B_hat r_q`, with `B_hat` the `N x L2` matrix of
/// cascaded steering vectors at the dequantized frequencies and `r_q` a
/// low-dimensional RVQ codeword.
#[derive(Debug, Clone)]
pub struct SubspaceCodebook {
    pub steering: DMatrix<Complex64>,
    base: Arc<RvqCodebook>,
    planted: Option<(usize, DVector<Complex64>)>,
}

impl SubspaceCodebook {
    pub fn new(steering: DMatrix<Complex64>, base: Arc<RvqCodebook>) -> Result<Self> {
        if steering.ncols() != base.dim() {
            return Err(Error::Dimension(format!(
                "steering matrix has {} columns, base codebook dimension {}",
                steering.ncols(),
                base.dim()
            )));
        }
        Ok(SubspaceCodebook {
            steering,
            base,
            planted: None,
        })
    }

    /// Replaces base codeword `index` by `r` (normalised). Used to place a
    /// known direction in the codebook.
    pub fn plant(&mut self, index: usize, r: DVector<Complex64>) -> Result<()> {
        if index >= self.base.size() || r.len() != self.base.dim() {
            return Err(Error::Dimension("planted codeword does not fit".into()));
        }
        let n = r.norm();
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        self.planted = Some((index, r / Complex64::new(n, 0.0)));
        Ok(())
    }

    pub fn base_vector(&self, q: usize) -> DVector<Complex64> {
        match &self.planted {
            Some((i, r)) if *i == q => r.clone(),
            _ => self.base.codeword(q),
        }
    }
}

/// Steering matrix from the dequantized frequency pairs of one column.
pub fn steering_matrix(pairs: &[FreqIndex], config: &SystemConfig) -> DMatrix<Complex64> {
    let mut b = DMatrix::zeros(config.n(), pairs.len());
    for (j, p) in pairs.iter().enumerate() {
        let (u, v) = p.dequantize(config.b0);
        b.set_column(
            j,
            &cascaded_steering_from_freq(u, v, config.n1, config.n2, config.d_r_over_lambda),
        );
    }
    b
}

pub fn build_subspace_codebook(
    pairs: &[FreqIndex],
    config: &SystemConfig,
    base: Arc<RvqCodebook>,
) -> Result<SubspaceCodebook> {
    SubspaceCodebook::new(steering_matrix(pairs, config), base)
}

impl Codebook for SubspaceCodebook {
    fn size(&self) -> usize {
        self.base.size()
    }

    fn dim(&self) -> usize {
        self.steering.nrows()
    }

    fn codeword(&self, q: usize) -> DVector<Complex64> {
        &self.steering * self.base_vector(q)
    }

    /// Search carried out in the `L2`-dimensional coordinates:
    /// `|c^H h|^2 / |c|^2 = |r^H y|^2 / (r^H G r)` with `y = B^H h` and
    /// `G = B^H B`.
    fn select(&self, column: &DVector<Complex64>) -> Result<CodewordChoice> {
        if column.len() != self.steering.nrows() {
            return Err(Error::Dimension(format!(
                "column length {} for codeword length {}",
                column.len(),
                self.steering.nrows()
            )));
        }
        let energy = column.norm_squared();
        if energy == 0.0 {
            return Err(Error::ZeroNorm);
        }
        let y = self.steering.adjoint() * column;
        let gram = self.steering.adjoint() * &self.steering;
        let l = y.len();
        let mut best = CodewordChoice {
            index: 0,
            distance: f64::INFINITY,
        };
        let mut scratch = vec![Complex64::new(0.0, 0.0); l];
        for q in 0..self.size() {
            let r: &[Complex64] = match &self.planted {
                Some((i, r)) if *i == q => r.as_slice(),
                _ => self.base.vector(q),
            };
            // gr = G r
            for (a, s) in scratch.iter_mut().enumerate() {
                *s = (0..l).map(|b| gram[(a, b)] * r[b]).sum();
            }
            let den: f64 = r.iter().zip(&scratch).map(|(r, g)| (r.conj() * g).re).sum();
            let num = r.iter().zip(y.iter()).map(|(r, y)| r.conj() * y).sum::<Complex64>().norm_sqr();
            let d = if den > 0.0 {
                (1.0 - num / (den * energy)).clamp(0.0, 1.0)
            } else {
                1.0
            };
            if d < best.distance {
                best = CodewordChoice { index: q, distance: d };
            }
        }
        Ok(best)
    }
}

/// Direct scan over materialised codewords.
pub fn select_codeword<C: Codebook + ?Sized>(column: &DVector<Complex64>, codebook: &C) -> Result<CodewordChoice> {
    codebook.select(column)
}
