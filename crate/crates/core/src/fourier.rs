//! Truncated Fourier features on `[0,1]^m` and stationary kernels built on them.
//!
//! Per dimension the basis has `2d+1` functions: index 0 is the constant, index `2k-1`
//! is `√2 cos(2πkz)` and index `2k` is `√2 sin(2πkz)` for `k = 1..=d`. Multi-dimensional
//! features are tensor products laid out lexicographically, first coordinate most
//! significant.

use std::f64::consts::{PI, SQRT_2};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 1-D truncated basis of size 2d+1 at z.
pub fn basis_1d(d: usize, z: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * d + 1);
    out.push(1.0);
    for k in 1..=d {
        let (s, c) = (2.0 * PI * k as f64 * z).sin_cos();
        out.push(SQRT_2 * c);
        out.push(SQRT_2 * s);
    }
    out
}

/// Tensor-product Fourier features of length (2d+1)^m.
pub fn fourier_features(m: usize, d: usize, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != m {
        return Err(Error::DimensionMismatch { expected: m, found: x.len() });
    }
    if x.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::OutOfDomain(x.to_vec()));
    }
    let mut phi = vec![1.0];
    for &z in x {
        let psi = basis_1d(d, z);
        let mut next = Vec::with_capacity(phi.len() * psi.len());
        for &a in &phi {
            for &b in &psi {
                next.push(a * b);
            }
        }
        phi = next;
    }
    Ok(phi)
}

/// The regular grid `{0, 1/n, …, (n-1)/n}^m`, lexicographic order.
pub fn grid_points(m: usize, n: usize) -> Vec<Vec<f64>> {
    let total = n.pow(m as u32);
    (0..total)
        .map(|mut code| {
            let mut p = vec![0.0; m];
            for slot in p.iter_mut().rev() {
                *slot = (code % n) as f64 / n as f64;
                code /= n;
            }
            p
        })
        .collect()
}

/// Diagonal spectrum `a` of a stationary kernel `L(x,y) = φ(x)ᵀ Diag(a) φ(y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierSpectrum {
    pub m: usize,
    pub d: usize,
    pub a: Vec<f64>,
}

impl FourierSpectrum {
    pub fn new(m: usize, d: usize, a: Vec<f64>) -> Result<Self> {
        let s = FourierSpectrum { m, d, a };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidParameter("spectrum needs m >= 1".into()));
        }
        if self.a.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: self.a.len() });
        }
        if self.a.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter("spectrum entries must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        (2 * self.d + 1).pow(self.m as u32)
    }

    /// Flat index of a per-dimension multi-index.
    pub fn index(&self, multi: &[usize]) -> usize {
        let n = 2 * self.d + 1;
        multi.iter().fold(0, |acc, &i| acc * n + i)
    }

    /// Spectrum of the marginal kernel, `b = a / (1 + a)`.
    pub fn marginal(&self) -> DVector<f64> {
        DVector::from_iterator(self.a.len(), self.a.iter().map(|a| a / (1.0 + a)))
    }

    pub fn kernel_eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        stationary_kernel_eval(self, x, y)
    }
}

/// φ(x)ᵀ Diag(a) φ(y).
pub fn stationary_kernel_eval(spec: &FourierSpectrum, x: &[f64], y: &[f64]) -> Result<f64> {
    let fx = fourier_features(spec.m, spec.d, x)?;
    let fy = fourier_features(spec.m, spec.d, y)?;
    Ok(fx.iter().zip(&fy).zip(&spec.a).map(|((a, b), w)| a * b * w).sum())
}

/// Ground-truth generator spectrum on `[0,1]^2`: `a_(i,j) = C_i C_j ã_i ã_j` with
/// `C_0 = ã_0 = 1`, `C_i = 1/√2` and `ã_i = i^{-β}` for `i ≥ 1`, and `d = (n-1)/2`.
pub fn synth_spectrum(n: usize, beta: f64) -> Result<FourierSpectrum> {
    if n % 2 == 0 {
        return Err(Error::InvalidParameter("grid side must be odd".into()));
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter("decay must be positive".into()));
    }
    let w: Vec<f64> = (0..n)
        .map(|i| if i == 0 { 1.0 } else { (i as f64).powf(-beta) / SQRT_2 })
        .collect();
    let mut a = Vec::with_capacity(n * n);
    for wi in &w {
        for wj in &w {
            a.push(wi * wj);
        }
    }
    FourierSpectrum::new(2, (n - 1) / 2, a)
}

/// Feature-space matrix B of a marginal kernel `K(x,y) = φ(x)ᵀ B φ(y)`.
#[derive(Debug, Clone)]
pub enum FeatureKernel {
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

impl FeatureKernel {
    fn eval(&self, fx: &[f64], fq: &[f64]) -> f64 {
        match self {
            FeatureKernel::Diagonal(b) => {
                fx.iter().zip(fq).zip(b.iter()).map(|((a, c), w)| a * c * w).sum()
            }
            FeatureKernel::Dense(b) => {
                let fq = DVector::from_column_slice(fq);
                let bq = b * fq;
                fx.iter().zip(bq.iter()).map(|(a, c)| a * c).sum()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridValue {
    pub x: f64,
    pub y: f64,
    pub k: f64,
}

/// K(x, q) over the `res × res` grid of `[0,1)^2`, row-major in x then y.
pub fn export_kernel_grid(
    d: usize,
    kernel: &FeatureKernel,
    q: [f64; 2],
    res: usize,
) -> Result<Vec<GridValue>> {
    let fq = fourier_features(2, d, &q)?;
    let rows: Vec<Vec<GridValue>> = (0..res)
        .into_par_iter()
        .map(|i| {
            let x = i as f64 / res as f64;
            (0..res)
                .map(|j| {
                    let y = j as f64 / res as f64;
                    let fx = fourier_features(2, d, &[x, y]).expect("grid point in domain");
                    GridValue { x, y, k: kernel.eval(&fx, &fq) }
                })
                .collect()
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

pub fn write_grid_csv<W: Write>(mut w: W, grid: &[GridValue]) -> Result<()> {
    writeln!(w, "x,y,K")?;
    for g in grid {
        writeln!(w, "{},{},{}", g.x, g.y, g.k)?;
    }
    Ok(())
}

/// Relative Frobenius error between two grids of the same shape.
pub fn grid_relative_error(fitted: &[GridValue], truth: &[GridValue]) -> f64 {
    let num: f64 = fitted.iter().zip(truth).map(|(a, b)| (a.k - b.k).powi(2)).sum();
    let den: f64 = truth.iter().map(|b| b.k * b.k).sum();
    (num / den).sqrt()
}
