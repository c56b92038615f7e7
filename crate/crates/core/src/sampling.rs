//! Exact sampling from explicitly enumerated DPPs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::ground::Observation;
use crate::kernel::LowRankL;
use crate::linalg::symmetrize;

pub const DEFAULT_CAP: usize = 4096;

/// Eigenvalues in `[-EIGEN_CLAMP, 0)` (relative to the largest) are rounding noise.
const EIGEN_CLAMP: f64 = 1e-10;
const REORTHONORMALIZE_EVERY: usize = 16;

/// A DPP with its ground set enumerated and its L matrix eigendecomposed.
#[derive(Debug, Clone)]
pub struct DenseDPP {
    items: Observation,
    l: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    /// Columns are eigenvectors; only those of nonzero eigenvalues are needed for sampling.
    eigenvectors: DMatrix<f64>,
}

impl DenseDPP {
    pub fn from_matrix(items: Observation, l: DMatrix<f64>) -> Result<Self> {
        if l.nrows() != items.len() || l.ncols() != items.len() {
            return Err(Error::DimensionMismatch { expected: items.len(), found: l.nrows() });
        }
        let mut sym = l.clone();
        symmetrize(&mut sym);
        let eig = sym.symmetric_eigen();
        let (eigenvalues, eigenvectors) = clamp_spectrum(eig.eigenvalues, eig.eigenvectors)?;
        Ok(DenseDPP { items, l, eigenvalues, eigenvectors })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &Observation {
        &self.items
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// K = L(L+I)⁻¹ from the cached spectrum.
    pub fn marginal_kernel(&self) -> DMatrix<f64> {
        let w = self.eigenvalues.map(|l| l / (1.0 + l));
        let scaled = crate::linalg::scale_columns(&self.eigenvectors, &w);
        scaled * self.eigenvectors.transpose()
    }

    /// E|X| = Σ λ/(1+λ)
    pub fn expected_size(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l / (1.0 + l)).sum()
    }

    /// log det(L + I)
    pub fn log_normalizer(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l.ln_1p()).sum()
    }
}

fn clamp_spectrum(values: DVector<f64>, vectors: DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let top = values.iter().fold(1.0_f64, |m, &x| m.max(x.abs()));
    let mut out = values;
    for v in out.iter_mut() {
        if *v < 0.0 {
            if *v < -EIGEN_CLAMP * top {
                return Err(Error::InvalidParameter(format!("L has a negative eigenvalue {v}")));
            }
            *v = 0.0;
        }
    }
    Ok((out, vectors))
}

/// Materializes L over the enumerated ground set and eigendecomposes it. With α = 0 the
/// spectrum comes from the V × V Gram matrix of the factor `Diag(p)^{1/2} Φ A^{1/2}`.
pub fn build_dense(l: &LowRankL, cap: usize) -> Result<DenseDPP> {
    let items = l.ground.enumerate(cap)?;
    let n = items.len();
    let v = l.dim();
    let mut f = DMatrix::zeros(n, v);
    for (i, x) in items.elements().enumerate() {
        let s = (0.5 * l.ground.log_p(x)?).exp();
        for (j, val) in l.ground.features(x)? {
            f[(i, j)] = s * val;
        }
    }
    let a = l.a_dense();
    let mut dense = &f * &a * f.transpose();
    symmetrize(&mut dense);
    if l.alpha > 0.0 {
        for i in 0..n {
            dense[(i, i)] += l.alpha;
        }
        return DenseDPP::from_matrix(items, dense);
    }
    // A^{1/2} through its own eigendecomposition (A is PSD by construction).
    let ea = a.symmetric_eigen();
    let half = ea.eigenvalues.map(|x| x.max(0.0).sqrt());
    let w = &f * crate::linalg::scale_columns(&ea.eigenvectors, &half);
    let mut gram = w.transpose() * &w;
    symmetrize(&mut gram);
    let eg = gram.symmetric_eigen();
    let (vals, q) = clamp_spectrum(eg.eigenvalues, eg.eigenvectors)?;
    let top = vals.iter().fold(0.0_f64, |m, &x| m.max(x));
    let keep: Vec<usize> = (0..vals.len()).filter(|&k| vals[k] > EIGEN_CLAMP * top.max(1e-300)).collect();
    let mut vecs = DMatrix::zeros(n, keep.len());
    for (c, &k) in keep.iter().enumerate() {
        let col = &w * q.column(k) / vals[k].sqrt();
        vecs.set_column(c, &col);
    }
    let eigenvalues = DVector::from_iterator(keep.len(), keep.iter().map(|&k| vals[k]));
    Ok(DenseDPP { items, l: dense, eigenvalues, eigenvectors: vecs })
}

/// One exact draw, as sorted indices into [`DenseDPP::items`].
pub fn sample_dpp<R: Rng + ?Sized>(d: &DenseDPP, rng: &mut R) -> Vec<usize> {
    let chosen: Vec<usize> = (0..d.eigenvalues.len())
        .filter(|&k| {
            let l = d.eigenvalues[k];
            rng.random::<f64>() < l / (1.0 + l)
        })
        .collect();
    let n = d.len();
    let mut basis = DMatrix::from_fn(n, chosen.len(), |i, c| d.eigenvectors[(i, chosen[c])]);
    let mut out = Vec::with_capacity(chosen.len());
    let mut step = 0;
    while basis.ncols() > 0 {
        let k = basis.ncols();
        let weights: Vec<f64> = (0..n).map(|i| basis.row(i).norm_squared()).collect();
        let i = draw_weighted(&weights, rng);
        out.push(i);
        basis = deflate(basis, i);
        step += 1;
        if step % REORTHONORMALIZE_EVERY == 0 && basis.ncols() > 0 {
            basis = basis.qr().q();
        }
        debug_assert_eq!(basis.ncols(), k - 1);
    }
    out.sort_unstable();
    out
}

/// A draw as an observation of ground-set elements.
pub fn sample_observation<R: Rng + ?Sized>(d: &DenseDPP, rng: &mut R) -> Observation {
    d.items.select(&sample_dpp(d, rng))
}

fn draw_weighted<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut target = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = i;
            if target < w {
                return i;
            }
            target -= w;
        }
    }
    last
}

/// Orthonormal basis of `{v ∈ span(basis) : vᵢ = 0}`. A Householder reflection rotates the
/// basis so that only its first column touches row i; that column is dropped.
fn deflate(basis: DMatrix<f64>, i: usize) -> DMatrix<f64> {
    let k = basis.ncols();
    let w: DVector<f64> = basis.row(i).transpose();
    let norm = w.norm();
    let mut h = w.clone();
    h[0] += if w[0] >= 0.0 { norm } else { -norm };
    let hn = h.norm_squared();
    let rotated = if hn > 0.0 {
        // basis · (I - 2hhᵀ/‖h‖²)
        let bh = &basis * &h;
        basis - bh * (h.transpose() * (2.0 / hn))
    } else {
        basis
    };
    rotated.columns(1, k - 1).into_owned()
}

/// n i.i.d. uniform points in [0,1)^m.
pub fn sample_uniform_iid<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..m).map(|_| rng.random::<f64>()).collect()).collect()
}

/// Distance from each point to its nearest neighbour, measured on the unit torus.
pub fn nearest_neighbor_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let wrap = |d: f64| {
        let d = d.abs().fract();
        d.min(1.0 - d)
    };
    (0..points.len())
        .map(|i| {
            (0..points.len())
                .filter(|&j| j != i)
                .map(|j| {
                    points[i].iter().zip(&points[j]).map(|(a, b)| wrap(a - b).powi(2)).sum::<f64>().sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}
